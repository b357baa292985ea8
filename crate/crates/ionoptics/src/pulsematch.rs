//! Pulse-arrival matching across fiber channels.
//!
//! Mode-locked pulses from different channels only interfere (and only
//! drive two-photon transitions efficiently) while their envelopes
//! overlap. For a Gaussian intensity envelope of FWHM `tau` the fringe
//! visibility against path mismatch `dL` is
//!
//! ```text
//! V(dL) = exp(-ln2 * (dL / L)^2),    L = v * tau
//! ```
//!
//! which is the normalized field-envelope overlap. Static per-channel
//! length offsets are corrected by motorized delay stages with a coarse
//! position grid; offsets beyond the stage travel need a fiber splice.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::profile::IntensityProfile;

/// Nominal free-space propagation speed used for the pulse-length figure
/// (3.0e8 m/s, so a 10 ps pulse is exactly 3.0 mm long). Configure the
/// exact vacuum value or a group velocity per scenario when it matters.
pub const NOMINAL_LIGHT_SPEED: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Intensity FWHM duration in seconds. The envelope is Gaussian;
    /// chirp and higher-order dispersion are out of scope.
    pub duration_fwhm: f64,
    pub wavelength: f64,
    pub propagation_speed: f64,
}

impl PulseSpec {
    pub fn new(duration_fwhm: f64, wavelength: f64) -> Result<Self> {
        let spec = PulseSpec {
            duration_fwhm,
            wavelength,
            propagation_speed: NOMINAL_LIGHT_SPEED,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 10 ps pulses at 532 nm.
    pub fn reference() -> Self {
        PulseSpec::new(10e-12, 532e-9).expect("reference pulse is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duration_fwhm", self.duration_fwhm),
            ("wavelength", self.wavelength),
            ("propagation_speed", self.propagation_speed),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("pulse {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Spatial pulse length L = v * tau.
    pub fn pulse_length(&self) -> f64 {
        self.propagation_speed * self.duration_fwhm
    }
}

/// Fringe visibility for a path-length mismatch `mismatch` (meters).
/// Even in `mismatch`, 1 at zero, 0.5 at one pulse length.
pub fn visibility(pulse: &PulseSpec, mismatch: f64) -> f64 {
    let u = mismatch / pulse.pulse_length();
    (-std::f64::consts::LN_2 * u * u).exp()
}

/// Motorized fiber delay stage. Reachable positions are the multiples of
/// `resolution` within the travel, plus the hard stop at `travel` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStage {
    pub travel: f64,
    pub resolution: f64,
    /// Current position in [0, travel].
    pub position: f64,
}

impl DelayStage {
    pub fn new(travel: f64, resolution: f64) -> Result<Self> {
        let stage = DelayStage { travel, resolution, position: 0.0 };
        stage.validate()?;
        Ok(stage)
    }

    /// 4 mm travel, 210 um step.
    pub fn reference() -> Self {
        DelayStage::new(4e-3, 210e-6).expect("reference stage is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.travel > 0.0) || !self.travel.is_finite() {
            return Err(Error::Config(format!("stage travel must be positive, got {}", self.travel)));
        }
        if !(self.resolution > 0.0) || self.resolution > self.travel {
            return Err(Error::Config(format!(
                "stage resolution must be in (0, travel], got {}",
                self.resolution
            )));
        }
        if !(0.0..=self.travel).contains(&self.position) {
            return Err(Error::Config(format!(
                "stage position {} outside [0, {}]",
                self.position, self.travel
            )));
        }
        Ok(())
    }

    /// All reachable positions, ascending.
    pub fn reachable_positions(&self) -> Vec<f64> {
        let steps = (self.travel / self.resolution * (1.0 + 1e-12)).floor() as usize;
        let mut out: Vec<f64> = (0..=steps).map(|k| k as f64 * self.resolution).collect();
        let last = *out.last().expect("at least position 0");
        if self.travel - last > 1e-12 * self.travel {
            out.push(self.travel);
        }
        out
    }
}

/// One channel's path-length state. `static_length_offset` is the as-built
/// length relative to the reference channel; the stage and any splice add
/// on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPath {
    pub channel_id: usize,
    pub static_length_offset: f64,
    pub stage: DelayStage,
    pub splice_adjustment: f64,
}

impl ChannelPath {
    /// Residual mismatch at the current stage position.
    pub fn mismatch(&self) -> f64 {
        self.static_length_offset + self.splice_adjustment + self.stage.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSolution {
    #[serde(rename = "position_m")]
    pub position: f64,
    /// Mismatch remaining at the chosen position (signed).
    #[serde(rename = "residual_m")]
    pub residual: f64,
    pub visibility: f64,
    /// True when the residual is within half a step, i.e. the required
    /// correction was reachable.
    pub in_range: bool,
}

/// Picks the reachable stage position maximizing visibility (equivalently
/// minimizing |mismatch|). Ties go to the smaller position.
pub fn optimize_stage(path: &ChannelPath, pulse: &PulseSpec) -> Result<StageSolution> {
    pulse.validate()?;
    path.stage.validate()?;
    if !path.static_length_offset.is_finite() || !path.splice_adjustment.is_finite() {
        return Err(Error::Config(format!(
            "channel {}: offsets must be finite",
            path.channel_id
        )));
    }
    let base = path.static_length_offset + path.splice_adjustment;
    let mut best: Option<(f64, f64)> = None; // (position, |residual|)
    for pos in path.stage.reachable_positions() {
        let r = (base + pos).abs();
        let better = match best {
            None => true,
            // strict improvement only: equal |residual| keeps the smaller
            // position already found
            Some((_, best_r)) => r < best_r,
        };
        if better {
            best = Some((pos, r));
        }
    }
    let (position, _) = best.expect("stage has at least one reachable position");
    let residual = base + position;
    Ok(StageSolution {
        position,
        residual,
        visibility: visibility(pulse, residual),
        in_range: residual.abs() <= 0.5 * path.stage.resolution * (1.0 + 1e-9),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpliceEntry {
    pub channel_id: usize,
    /// Length to add by splicing (negative = shorten).
    #[serde(rename = "splice_m")]
    pub splice: f64,
    /// Re-optimized stage state after the splice.
    #[serde(flatten)]
    pub solution: StageSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplicePlan {
    pub visibility_floor: f64,
    /// Channels that needed a splice, in input order.
    pub entries: Vec<SpliceEntry>,
}

/// For every channel whose best-achievable visibility is below `floor`,
/// recommends a splice that recenters the required stage correction to
/// mid-travel, then re-optimizes. Fails upfront if the floor exceeds what
/// the stage quantization can guarantee, V(resolution/2).
pub fn splice_plan(
    paths: &[ChannelPath],
    pulse: &PulseSpec,
    floor: f64,
) -> Result<SplicePlan> {
    pulse.validate()?;
    if !(floor > 0.0) || floor > 1.0 {
        return Err(Error::Config(format!(
            "visibility floor must be in (0, 1], got {floor}"
        )));
    }
    for path in paths {
        path.stage.validate()?;
        let bound = visibility(pulse, 0.5 * path.stage.resolution);
        if floor > bound {
            return Err(Error::InfeasibleFloor { floor, bound });
        }
    }
    let mut entries = Vec::new();
    for path in paths {
        let sol = optimize_stage(path, pulse)?;
        if sol.visibility >= floor {
            continue;
        }
        // center the required correction: static + splices = -travel/2
        let splice =
            -0.5 * path.stage.travel - path.static_length_offset - path.splice_adjustment;
        let respliced = ChannelPath {
            splice_adjustment: path.splice_adjustment + splice,
            ..path.clone()
        };
        let solution = optimize_stage(&respliced, pulse)?;
        debug_assert!(solution.visibility >= floor);
        entries.push(SpliceEntry { channel_id: path.channel_id, splice, solution });
    }
    Ok(SplicePlan { visibility_floor: floor, entries })
}

/// Synthetic two-beam interference pattern for a given path mismatch:
/// I(x) = 1 + V cos(2 pi x * 2 sin(theta) / lambda), with theta the beam
/// half-angle. Eight fringe periods at 128 samples each, starting at
/// x = 0 so extrema land exactly on the grid.
pub fn fringe_pattern(
    pulse: &PulseSpec,
    mismatch: f64,
    half_angle: f64,
) -> Result<IntensityProfile> {
    fringe_pattern_with(pulse, mismatch, half_angle, 8, 128)
}

/// [`fringe_pattern`] with explicit period count and sampling density.
pub fn fringe_pattern_with(
    pulse: &PulseSpec,
    mismatch: f64,
    half_angle: f64,
    periods: usize,
    samples_per_period: usize,
) -> Result<IntensityProfile> {
    pulse.validate()?;
    if !(half_angle > 0.0) || half_angle >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Config(format!(
            "fringe half-angle must be in (0, pi/2), got {half_angle}"
        )));
    }
    if periods < 3 || samples_per_period < 8 || samples_per_period % 2 != 0 {
        return Err(Error::Config(
            "fringe pattern needs >= 3 periods and an even samples_per_period >= 8".into(),
        ));
    }
    let v = visibility(pulse, mismatch);
    let period = pulse.wavelength / (2.0 * half_angle.sin());
    let pitch = period / samples_per_period as f64;
    let n = periods * samples_per_period;
    let samples = (0..n)
        .map(|j| {
            let phase = 2.0 * std::f64::consts::PI * (j % samples_per_period) as f64
                / samples_per_period as f64;
            1.0 + v * phase.cos()
        })
        .collect();
    IntensityProfile::new(samples, pitch, 0.0)
}
