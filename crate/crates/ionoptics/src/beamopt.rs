//! Paraxial Gaussian beam transport.
//!
//! A beam axis is described by its 1/e² intensity waist radius `w0`, the
//! waist location along the optical axis, and the wavelength. Propagation
//! through paraxial elements uses the complex beam parameter
//!
//! ```text
//! q(z) = (z - z_waist) + i * zR,    zR = pi * w0^2 / lambda
//! q'   = (A q + B) / (C q + D)
//! ```
//!
//! Convention: a beam is always expressed relative to a reference plane;
//! `waist_position` is the waist coordinate in that frame (positive =
//! downstream). `propagate` applies the element at the reference plane and
//! returns the beam relative to the element's output plane, so
//! `FreeSpace(d)` shifts `waist_position` by `-d`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBeamAxis {
    /// Wavelength in meters.
    pub wavelength: f64,
    /// 1/e² intensity radius at the waist, meters.
    pub waist_radius: f64,
    /// Waist coordinate relative to the beam's reference plane, meters.
    pub waist_position: f64,
    /// Fraction of total power carried by this axis (bookkeeping for
    /// elliptical beams; 1.0 for a lone axis).
    pub power_fraction: f64,
}

impl GaussianBeamAxis {
    pub fn new(wavelength: f64, waist_radius: f64) -> Result<Self> {
        let beam = GaussianBeamAxis {
            wavelength,
            waist_radius,
            waist_position: 0.0,
            power_fraction: 1.0,
        };
        beam.validate()?;
        Ok(beam)
    }

    pub fn with_waist_position(mut self, z: f64) -> Self {
        self.waist_position = z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(Error::InvalidBeam(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if !(self.waist_radius > 0.0) || !self.waist_radius.is_finite() {
            return Err(Error::InvalidBeam(format!(
                "waist radius must be positive, got {}",
                self.waist_radius
            )));
        }
        if !self.waist_position.is_finite() {
            return Err(Error::InvalidBeam("waist position must be finite".into()));
        }
        if !(self.power_fraction > 0.0) || self.power_fraction > 1.0 {
            return Err(Error::InvalidBeam(format!(
                "power fraction must be in (0, 1], got {}",
                self.power_fraction
            )));
        }
        Ok(())
    }

    /// Rayleigh range zR = pi w0^2 / lambda.
    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist_radius * self.waist_radius / self.wavelength
    }

    /// Far-field 1/e² half-divergence theta = lambda / (pi w0). For a
    /// fiber mode this equals its numerical aperture in the Gaussian
    /// approximation.
    pub fn divergence(&self) -> f64 {
        self.wavelength / (PI * self.waist_radius)
    }

    /// Mode-field diameter 2 w0.
    pub fn mode_field_diameter(&self) -> f64 {
        2.0 * self.waist_radius
    }

    /// 1/e² intensity radius at coordinate `z` in the beam's frame:
    /// w(z) = w0 sqrt(1 + ((z - z_waist)/zR)^2).
    pub fn radius_at(&self, z: f64) -> f64 {
        let u = (z - self.waist_position) / self.rayleigh_range();
        self.waist_radius * (1.0 + u * u).sqrt()
    }

    /// Complex beam parameter at the reference plane (z = 0).
    fn q(&self) -> Complex64 {
        Complex64::new(-self.waist_position, self.rayleigh_range())
    }
}

/// Builds a beam from a fiber mode-field diameter (w0 = MFD / 2).
pub fn beam_from_mfd(wavelength: f64, mfd: f64) -> Result<GaussianBeamAxis> {
    GaussianBeamAxis::new(wavelength, mfd / 2.0)
}

/// Ray-transfer matrix in reduced paraxial coordinates, det = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RayMatrix {
    pub const IDENTITY: RayMatrix = RayMatrix { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    /// `self` applied after `first` (matrix product self * first).
    pub fn after(&self, first: &RayMatrix) -> RayMatrix {
        RayMatrix {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }
}

/// Paraxial optical elements. The magnifier models an ideal (telecentric
/// when flagged) imaging relay with transverse magnification `m`; its
/// reduced-coordinate matrix is [[m, 0], [0, 1/m]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParaxialElement {
    FreeSpace { length: f64 },
    ThinLens { focal_length: f64 },
    IdealMagnifier { magnification: f64, telecentric: bool },
}

impl ParaxialElement {
    pub fn abcd(&self) -> Result<RayMatrix> {
        match *self {
            ParaxialElement::FreeSpace { length } => {
                if !length.is_finite() {
                    return Err(Error::InvalidElement(format!(
                        "free-space length must be finite, got {length}"
                    )));
                }
                Ok(RayMatrix { a: 1.0, b: length, c: 0.0, d: 1.0 })
            }
            ParaxialElement::ThinLens { focal_length } => {
                if focal_length == 0.0 || !focal_length.is_finite() {
                    return Err(Error::InvalidElement(format!(
                        "thin-lens focal length must be nonzero and finite, got {focal_length}"
                    )));
                }
                Ok(RayMatrix { a: 1.0, b: 0.0, c: -1.0 / focal_length, d: 1.0 })
            }
            ParaxialElement::IdealMagnifier { magnification, .. } => {
                if magnification == 0.0 || !magnification.is_finite() {
                    return Err(Error::InvalidElement(format!(
                        "magnification must be nonzero and finite, got {magnification}"
                    )));
                }
                Ok(RayMatrix {
                    a: magnification,
                    b: 0.0,
                    c: 0.0,
                    d: 1.0 / magnification,
                })
            }
        }
    }
}

/// An ordered sequence of paraxial elements, first element applied first.
#[derive(Debug, Clone, Default)]
pub struct OpticalTrain {
    pub elements: Vec<ParaxialElement>,
}

impl OpticalTrain {
    pub fn new(elements: Vec<ParaxialElement>) -> Self {
        OpticalTrain { elements }
    }

    /// Composed ray matrix of the whole train.
    pub fn combined(&self) -> Result<RayMatrix> {
        let mut m = RayMatrix::IDENTITY;
        for e in &self.elements {
            m = e.abcd()?.after(&m);
        }
        Ok(m)
    }

    pub fn propagate(&self, beam: &GaussianBeamAxis) -> Result<GaussianBeamAxis> {
        let mut b = *beam;
        for e in &self.elements {
            b = propagate(&b, e)?;
        }
        Ok(b)
    }
}

/// Propagates a beam through one element via the complex-q ABCD law.
pub fn propagate(beam: &GaussianBeamAxis, element: &ParaxialElement) -> Result<GaussianBeamAxis> {
    propagate_matrix(beam, &element.abcd()?)
}

/// Propagates through an arbitrary ray matrix. The output is expressed
/// relative to the element's output plane.
pub fn propagate_matrix(beam: &GaussianBeamAxis, m: &RayMatrix) -> Result<GaussianBeamAxis> {
    beam.validate()?;
    let q = beam.q();
    let denom = q * m.c + m.d;
    if denom.norm_sqr() == 0.0 {
        return Err(Error::SingularPropagation);
    }
    let q2 = (q * m.a + m.b) / denom;
    let zr2 = q2.im;
    if !(zr2 > 0.0) {
        // det = 1 real matrices preserve Im(q) > 0; anything else is a
        // broken transform.
        return Err(Error::SingularPropagation);
    }
    Ok(GaussianBeamAxis {
        wavelength: beam.wavelength,
        waist_radius: (beam.wavelength * zr2 / PI).sqrt(),
        waist_position: -q2.re,
        power_fraction: beam.power_fraction,
    })
}

/// Two orthogonal beam axes sharing one wavelength. `x` is the ion-chain
/// axis; `y` is orthogonal to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticalBeam {
    pub x_axis: GaussianBeamAxis,
    pub y_axis: GaussianBeamAxis,
}

impl EllipticalBeam {
    pub fn new(x_axis: GaussianBeamAxis, y_axis: GaussianBeamAxis) -> Result<Self> {
        x_axis.validate()?;
        y_axis.validate()?;
        if x_axis.wavelength != y_axis.wavelength {
            return Err(Error::InvalidBeam(format!(
                "elliptical beam axes must share a wavelength ({} vs {})",
                x_axis.wavelength, y_axis.wavelength
            )));
        }
        Ok(EllipticalBeam { x_axis, y_axis })
    }

    pub fn round(axis: GaussianBeamAxis) -> Result<Self> {
        EllipticalBeam::new(axis, axis)
    }

    /// Aspect ratio y/x of waist radii.
    pub fn aspect(&self) -> f64 {
        self.y_axis.waist_radius / self.x_axis.waist_radius
    }
}

/// Reshapes a beam so the y (orthogonal) waist is `aspect` times the x
/// waist at the same image plane; the x axis is untouched. Models the
/// cylindrical-telescope stretch that keeps the chain axis tight while
/// relaxing alignment orthogonal to it.
pub fn shape_elliptical(beam: &GaussianBeamAxis, aspect: f64) -> Result<EllipticalBeam> {
    beam.validate()?;
    if !(aspect > 0.0) || !aspect.is_finite() {
        return Err(Error::InvalidBeam(format!(
            "aspect ratio must be positive, got {aspect}"
        )));
    }
    let y_axis = GaussianBeamAxis {
        waist_radius: aspect * beam.waist_radius,
        ..*beam
    };
    EllipticalBeam::new(*beam, y_axis)
}

/// Inputs for an etendue feasibility check: can a source array with the
/// given pitch and per-emitter NA be imaged onto a target pitch within the
/// target NA by any lossless relay?
#[derive(Debug, Clone, Copy)]
pub struct LagrangeBudget {
    pub source_pitch: f64,
    pub source_na: f64,
    pub target_pitch: f64,
    pub target_na: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LagrangeCheck {
    pub feasible: bool,
    /// (source_pitch / 2) * source_na, in m*rad.
    pub source_invariant: f64,
    /// (target_pitch / 2) * target_na, in m*rad.
    pub target_invariant: f64,
}

/// Evaluates the Lagrange invariant on both sides. A passive relay
/// conserves (pitch/2)*NA, so the mapping is feasible iff the source
/// invariant does not exceed the target invariant.
pub fn lagrange_feasible(budget: &LagrangeBudget) -> Result<LagrangeCheck> {
    for (name, v) in [
        ("source_pitch", budget.source_pitch),
        ("source_na", budget.source_na),
        ("target_pitch", budget.target_pitch),
        ("target_na", budget.target_na),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidBeam(format!("{name} must be positive, got {v}")));
        }
    }
    let source_invariant = 0.5 * budget.source_pitch * budget.source_na;
    let target_invariant = 0.5 * budget.target_pitch * budget.target_na;
    Ok(LagrangeCheck {
        feasible: source_invariant <= target_invariant,
        source_invariant,
        target_invariant,
    })
}
