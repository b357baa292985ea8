//! Design and analysis toolkit for multi-channel guided-light addressing
//! optics: Gaussian-beam relays and etendue budgets, scalar-diffraction
//! point-spread functions and neighbor crosstalk, splitter-tree fitting,
//! decibel power ledgers, pulsed-beam path matching, and calibrated
//! beam-profile analysis.
//!
//! The crate is organized as small, independently testable modules:
//!
//! - [`beamopt`]: paraxial Gaussian beam propagation (complex-q ABCD),
//!   elliptical beams, Lagrange-invariant feasibility checks.
//! - [`diffraction`]: 1D scalar Fourier pupil model, aberrated PSFs,
//!   chain intensity maps, microlens focal-length tolerance sweeps.
//! - [`splitter`]: binary directional-coupler tree with a linear thermal
//!   model, forward power prediction and exact inverse fitting.
//! - [`powerbudget`]: insertion-loss ledgers in dB, max-min balanced
//!   power curves, two-photon Rabi rate and crosstalk error algebra.
//! - [`pulsematch`]: picosecond pulse overlap visibility, delay-stage
//!   quantization, splice planning, fringe synthesis.
//! - [`profiles`]: HDR exposure stitching, noise floors, sub-pixel peak
//!   refinement, crosstalk extraction and fringe contrast from profiles.
//! - [`scenario`] and [`commands`]: config-file plumbing for the thin
//!   CLI binary; all outputs deterministic given the scenario seed.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod beamopt;
pub mod commands;
pub mod diffraction;
pub mod error;
pub mod powerbudget;
pub mod profile;
pub mod profiles;
pub mod pulsematch;
pub mod rng;
pub mod scenario;
pub mod splitter;

pub use error::{Error, Result};
