//! Scalar Fourier-optics engine for ion-plane intensity profiles.
//!
//! The addressing optics are modeled as a Gaussian beam filling a hard
//! circular pupil of the final objective. The 1D focal-plane field along
//! the ion chain is the unitary DFT of
//!
//! ```text
//! P(rho) = exp(-((rho - shift)/fill)^2) * [|rho| <= 1] * exp(i 2 pi W(rho))
//! ```
//!
//! with `rho` the signed normalized pupil coordinate and `W` the
//! aberration polynomial in waves. Intensities from distinct channels add
//! incoherently: the AOM channels carry different RF frequencies, so the
//! time-averaged ion-plane intensity is the sum of per-channel patterns.
//!
//! Microlens tolerancing maps each focal-length/decenter perturbation to
//! an effective pupil fill, defocus, and pupil shift via Gaussian beam
//! propagation, then reads crosstalk off the perturbed pattern.

use std::collections::BTreeSet;

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beamopt::{beam_from_mfd, ParaxialElement};
use crate::error::{Error, Result};
use crate::profile::IntensityProfile;

/// Ion-side layout and the demagnification that maps the expanded
/// per-channel waist onto it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGeometry {
    pub channel_count: usize,
    #[serde(rename = "ion_pitch_m")]
    pub ion_pitch: f64,
    pub demagnification: f64,
    #[serde(rename = "object_waist_m")]
    pub object_waist: f64,
}

impl ChannelGeometry {
    /// 16 channels on a 4 um pitch, 62.5x demagnification of a 56.25 um
    /// expanded waist.
    pub fn reference() -> Self {
        ChannelGeometry {
            channel_count: 16,
            ion_pitch: 4e-6,
            demagnification: 62.5,
            object_waist: 56.25e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_count < 1 {
            return Err(Error::Config("channel_count must be >= 1".into()));
        }
        for (name, v) in [
            ("ion_pitch_m", self.ion_pitch),
            ("demagnification", self.demagnification),
            ("object_waist_m", self.object_waist),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Waist radius the demagnified channel presents at the ion plane.
    pub fn image_waist(&self) -> f64 {
        self.object_waist / self.demagnification
    }

    /// Ion site position for a 1-based channel index, chain centered on 0.
    pub fn site_position(&self, channel: usize) -> f64 {
        let center = (self.channel_count as f64 + 1.0) / 2.0;
        (channel as f64 - center) * self.ion_pitch
    }
}

/// Low-order aberration coefficients in waves at the pupil edge, for the
/// 1D section along the chain axis: W(rho) = (defocus + astigmatism) rho^2
/// + coma rho^3 + spherical rho^4, rho signed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AberrationCoeffs {
    #[serde(rename = "defocus_waves")]
    pub defocus: f64,
    #[serde(rename = "astigmatism_waves")]
    pub astigmatism: f64,
    #[serde(rename = "coma_waves")]
    pub coma: f64,
    #[serde(rename = "spherical_waves")]
    pub spherical: f64,
}

impl AberrationCoeffs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("defocus_waves", self.defocus),
            ("astigmatism_waves", self.astigmatism),
            ("coma_waves", self.coma),
            ("spherical_waves", self.spherical),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidPupil(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    fn phase_waves(&self, rho: f64, extra_defocus: f64) -> f64 {
        let r2 = rho * rho;
        (self.defocus + self.astigmatism + extra_defocus) * r2
            + self.coma * r2 * rho
            + self.spherical * r2 * r2
    }

    /// Bound on |dW/drho| over the aperture, in waves per unit rho.
    fn edge_slope_waves(&self, extra_defocus: f64) -> f64 {
        2.0 * (self.defocus + self.astigmatism + extra_defocus).abs()
            + 3.0 * self.coma.abs()
            + 4.0 * self.spherical.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PupilSpec {
    pub numerical_aperture: f64,
    #[serde(rename = "wavelength_m")]
    pub wavelength: f64,
    #[serde(default)]
    pub aberrations: AberrationCoeffs,
}

impl PupilSpec {
    /// NA 0.37 objective at 532 nm, aberration-free.
    pub fn reference() -> Self {
        PupilSpec {
            numerical_aperture: 0.37,
            wavelength: 532e-9,
            aberrations: AberrationCoeffs::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(Error::InvalidPupil(format!(
                "numerical_aperture must be in (0, 1), got {}",
                self.numerical_aperture
            )));
        }
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(Error::InvalidPupil(format!(
                "wavelength_m must be positive, got {}",
                self.wavelength
            )));
        }
        self.aberrations.validate()
    }

    pub fn with_aberrations(mut self, aberrations: AberrationCoeffs) -> Self {
        self.aberrations = aberrations;
        self
    }
}

/// Pupil fill factor that focuses to a given image-plane waist radius:
/// fill = lambda / (pi NA w_image). The fill factor is the beam 1/e^2
/// intensity radius at the pupil divided by the pupil radius.
pub fn fill_for_image_waist(pupil: &PupilSpec, image_waist: f64) -> Result<f64> {
    pupil.validate()?;
    if !(image_waist > 0.0) || !image_waist.is_finite() {
        return Err(Error::InvalidPupil(format!(
            "image waist must be positive, got {image_waist}"
        )));
    }
    Ok(pupil.wavelength / (std::f64::consts::PI * pupil.numerical_aperture * image_waist))
}

/// Fill factor implied by the channel geometry's demagnified waist.
pub fn fill_from_geometry(pupil: &PupilSpec, geom: &ChannelGeometry) -> Result<f64> {
    geom.validate()?;
    fill_for_image_waist(pupil, geom.image_waist())
}

/// DFT sampling control. `pupil_samples` points span the aperture
/// diameter; zero-padding by `padding` sets the focal-plane sample pitch
/// to lambda / (2 NA padding), i.e. `padding` samples across the
/// diffraction-limited spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSpec {
    pub pupil_samples: usize,
    pub padding: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        // 8x padding holds interpolation error at the 1e-6 crosstalk
        // dynamic range; tail-convergence studies should double it.
        SamplingSpec { pupil_samples: 512, padding: 8 }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pupil_samples < 64 || self.pupil_samples % 2 != 0 {
            return Err(Error::UndersampledGrid(format!(
                "pupil_samples must be even and >= 64, got {}",
                self.pupil_samples
            )));
        }
        if self.padding < 4 {
            return Err(Error::UndersampledGrid(format!(
                "padding must be >= 4 samples across the diffraction spot, got {}",
                self.padding
            )));
        }
        if self.pupil_samples.saturating_mul(self.padding) > (1 << 22) {
            return Err(Error::Config(format!(
                "grid of {} x {} points exceeds the 2^22 sample cap",
                self.pupil_samples, self.padding
            )));
        }
        Ok(())
    }

    fn grid_len(&self) -> usize {
        self.pupil_samples * self.padding
    }
}

/// Unnormalized focal-plane intensity (unitary-DFT units) with the beam
/// decentered in the pupil and extra defocus added; returns the shifted
/// sample array and the focal-plane sample pitch.
fn psf_intensity_raw(
    pupil: &PupilSpec,
    fill: f64,
    sampling: &SamplingSpec,
    pupil_shift: f64,
    extra_defocus_waves: f64,
) -> Result<(Vec<f64>, f64)> {
    pupil.validate()?;
    sampling.validate()?;
    if !(fill > 0.0) || !fill.is_finite() {
        return Err(Error::InvalidPupil(format!("pupil fill must be positive, got {fill}")));
    }
    if !pupil_shift.is_finite() || !extra_defocus_waves.is_finite() {
        return Err(Error::InvalidPupil("pupil perturbation must be finite".into()));
    }
    let n = sampling.pupil_samples;
    let big_n = sampling.grid_len();
    let drho = 2.0 / n as f64;
    let slope = pupil.aberrations.edge_slope_waves(extra_defocus_waves);
    if slope * drho >= 0.5 {
        return Err(Error::UndersampledGrid(format!(
            "aberration phase advances {:.2} waves per pupil sample; raise pupil_samples",
            slope * drho
        )));
    }

    // pupil field in DFT (DC-first) ordering
    let half = (n / 2) as i64;
    let mut field = vec![Complex::new(0.0, 0.0); big_n];
    for (m, slot) in field.iter_mut().enumerate() {
        let mc = if m < big_n / 2 { m as i64 } else { m as i64 - big_n as i64 };
        if mc.abs() > half {
            continue;
        }
        let rho = mc as f64 * drho;
        let t = (rho - pupil_shift) / fill;
        let amp = (-t * t).exp();
        let phase = 2.0
            * std::f64::consts::PI
            * pupil.aberrations.phase_waves(rho, extra_defocus_waves);
        *slot = Complex::from_polar(amp, phase);
    }

    FftPlanner::new().plan_fft_forward(big_n).process(&mut field);
    let unitary = 1.0 / (big_n as f64).sqrt();

    // fftshift so position ascends left to right, x = 0 at index big_n/2
    let dx = pupil.wavelength / (2.0 * pupil.numerical_aperture * sampling.padding as f64);
    let mut samples = vec![0.0; big_n];
    for (j, s) in samples.iter_mut().enumerate() {
        let k = (j + big_n / 2) % big_n;
        *s = (field[k] * unitary).norm_sqr();
    }
    Ok((samples, dx))
}

/// Focal-plane intensity with the beam decentered in the pupil and extra
/// defocus added; shared by the ideal PSF and the tolerance sweep.
/// Normalized to unit peak.
fn psf_perturbed(
    pupil: &PupilSpec,
    fill: f64,
    sampling: &SamplingSpec,
    pupil_shift: f64,
    extra_defocus_waves: f64,
) -> Result<IntensityProfile> {
    let (mut samples, dx) = psf_intensity_raw(pupil, fill, sampling, pupil_shift, extra_defocus_waves)?;
    let origin = -(samples.len() as f64 / 2.0) * dx;
    let peak = samples.iter().cloned().fold(f64::MIN, f64::max);
    // divide (not multiply by the reciprocal) so the peak is exactly 1.0
    for s in &mut samples {
        *s /= peak;
    }
    IntensityProfile::new(samples, dx, origin)
}

/// 1D focal-plane intensity along the ion chain, normalized to unit peak.
/// `fill` is the pupil truncation ratio (beam radius / pupil radius).
pub fn psf_1d(
    pupil: &PupilSpec,
    fill: f64,
    sampling: &SamplingSpec,
) -> Result<IntensityProfile> {
    psf_perturbed(pupil, fill, sampling, 0.0, 0.0)
}

/// Relative intensity I(peak + d) / I(peak) for each requested offset.
/// The peak is the maximum sample; offsets interpolate linearly and must
/// stay inside the profile support.
pub fn crosstalk_at(profile: &IntensityProfile, offsets: &[f64]) -> Result<Vec<f64>> {
    let (peak_idx, peak) = profile.peak_sample();
    if peak <= 0.0 {
        return Err(Error::Physics("profile has no positive peak".into()));
    }
    let x0 = profile.position(peak_idx);
    offsets
        .iter()
        .map(|&d| Ok(profile.value_at(x0 + d)? / peak))
        .collect()
}

/// Crosstalk one ion pitch away on each side of the peak: (left, right).
pub fn neighbor_crosstalk(profile: &IntensityProfile, pitch: f64) -> Result<(f64, f64)> {
    let v = crosstalk_at(profile, &[-pitch, pitch])?;
    Ok((v[0], v[1]))
}

/// Combined intensity pattern with a unit-peak PSF centered on every
/// active channel's ion site, plus the per-site relative intensity.
#[derive(Debug, Clone)]
pub struct ChainMap {
    pub profile: IntensityProfile,
    /// Ion site positions for channels 1..=channel_count.
    pub site_positions: Vec<f64>,
    /// Intensity at each site relative to a single channel's peak.
    pub site_relative: Vec<f64>,
}

/// Incoherent sum of single-channel PSFs at the active channels' sites.
/// Channels are 1-based; the chain is centered on x = 0.
pub fn chain_intensity_map(
    geom: &ChannelGeometry,
    pupil: &PupilSpec,
    fill: f64,
    sampling: &SamplingSpec,
    active_channels: &BTreeSet<usize>,
) -> Result<ChainMap> {
    geom.validate()?;
    if active_channels.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if let Some(&bad) = active_channels
        .iter()
        .find(|&&c| c < 1 || c > geom.channel_count)
    {
        return Err(Error::Config(format!(
            "active channel {bad} outside 1..={}",
            geom.channel_count
        )));
    }
    let psf = psf_perturbed(pupil, fill, sampling, 0.0, 0.0)?;
    let dx = psf.pixel_pitch();
    let half_span = -psf.origin(); // psf is centered on 0

    let first_site = geom.site_position(1);
    let last_site = geom.site_position(geom.channel_count);
    let origin = first_site - half_span;
    let len = ((last_site + half_span - origin) / dx).round() as usize + 1;

    // fixed ascending channel order keeps summation reproducible and
    // additive across disjoint active sets to rounding
    let mut samples = vec![0.0; len];
    for &c in active_channels {
        let xc = geom.site_position(c);
        for (j, s) in samples.iter_mut().enumerate() {
            let x = origin + j as f64 * dx - xc;
            if let Ok(v) = psf.value_at(x) {
                *s += v;
            }
        }
    }
    let profile = IntensityProfile::new(samples, dx, origin)?;
    let site_positions: Vec<f64> =
        (1..=geom.channel_count).map(|c| geom.site_position(c)).collect();
    let site_relative = site_positions
        .iter()
        .map(|&x| profile.value_at(x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ChainMap { profile, site_positions, site_relative })
}

/// One microlens realization: catalog focal length, manufacturing error
/// on it, and transverse decenter of the lens relative to its fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlaPerturbation {
    #[serde(rename = "efl_m")]
    pub efl: f64,
    #[serde(rename = "efl_error_m", default)]
    pub efl_error: f64,
    #[serde(rename = "decenter_m", default)]
    pub decenter: f64,
}

impl MlaPerturbation {
    pub fn nominal(efl: f64) -> Self {
        MlaPerturbation { efl, efl_error: 0.0, decenter: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efl > 0.0) || !self.efl.is_finite() {
            return Err(Error::Config(format!("efl_m must be positive, got {}", self.efl)));
        }
        if !self.efl_error.is_finite() || !self.decenter.is_finite() {
            return Err(Error::Config("efl_error_m and decenter_m must be finite".into()));
        }
        if self.efl + self.efl_error <= 0.0 {
            return Err(Error::Config(format!(
                "efl {} + error {} gives a non-positive focal length",
                self.efl, self.efl_error
            )));
        }
        Ok(())
    }
}

/// One evaluated tolerance-sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub perturbation: MlaPerturbation,
    /// Effective pupil fill after the perturbed collimation.
    pub pupil_fill: f64,
    /// Image-space defocus induced by the collimation error, in waves.
    pub defocus_waves: f64,
    pub crosstalk_left: f64,
    pub crosstalk_right: f64,
    /// Worst of the two neighbor sites.
    pub crosstalk: f64,
}

/// Evaluates neighbor crosstalk for each microlens realization.
///
/// The fiber waist sits at the catalog focal distance in front of the
/// lens; the manufactured focal length is `efl + efl_error`. The output
/// beam's waist size sets the pupil fill, its waist position error maps
/// to image-space defocus through the longitudinal demagnification, and
/// lens decenter tilts the beam, shifting it across the pupil.
pub fn mla_tolerance_sweep(
    geom: &ChannelGeometry,
    pupil: &PupilSpec,
    fiber_mfd: f64,
    sampling: &SamplingSpec,
    perturbations: &[MlaPerturbation],
) -> Result<Vec<SweepRow>> {
    geom.validate()?;
    pupil.validate()?;
    if perturbations.is_empty() {
        return Err(Error::Config("tolerance sweep needs at least one perturbation".into()));
    }
    let fiber = beam_from_mfd(pupil.wavelength, fiber_mfd)?;
    let demag = geom.demagnification;
    let mut rows = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        p.validate()?;
        let focal = p.efl + p.efl_error;
        let collimated = crate::beamopt::propagate(
            &crate::beamopt::propagate(&fiber, &ParaxialElement::FreeSpace { length: p.efl })?,
            &ParaxialElement::ThinLens { focal_length: focal },
        )?;
        let fill = pupil.wavelength * demag
            / (std::f64::consts::PI * pupil.numerical_aperture * collimated.waist_radius);
        // waist should land one focal length downstream; the shortfall,
        // demagnified longitudinally, defocuses the image
        let waist_error_obj = collimated.waist_position - p.efl;
        let waist_error_img = waist_error_obj / (demag * demag);
        let defocus_waves = waist_error_img * pupil.numerical_aperture.powi(2)
            / (2.0 * pupil.wavelength);
        let pupil_shift = (p.decenter / focal) * demag / pupil.numerical_aperture;
        let psf = psf_perturbed(pupil, fill, sampling, pupil_shift, defocus_waves)?;
        let (left, right) = neighbor_crosstalk(&psf, geom.ion_pitch)?;
        rows.push(SweepRow {
            perturbation: *p,
            pupil_fill: fill,
            defocus_waves,
            crosstalk_left: left,
            crosstalk_right: right,
            crosstalk: left.max(right),
        });
    }
    Ok(rows)
}

/// Row with the lowest crosstalk; exact ties go to the smallest EFL.
pub fn select_best_efl(rows: &[SweepRow]) -> Result<&SweepRow> {
    let mut best = rows
        .first()
        .ok_or_else(|| Error::Config("tolerance table is empty".into()))?;
    for row in &rows[1..] {
        let better = row.crosstalk < best.crosstalk
            || (row.crosstalk == best.crosstalk && row.perturbation.efl < best.perturbation.efl);
        if better {
            best = row;
        }
    }
    Ok(best)
}

/// Arithmetic EFL grid, endpoints inclusive.
pub fn efl_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start > 0.0) || !(step > 0.0) || stop < start {
        return Err(Error::Config(format!(
            "EFL grid needs 0 < start <= stop and step > 0, got {start}..{stop} by {step}"
        )));
    }
    let count = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Monte Carlo perturbation set: `per_efl` draws of Gaussian focal-length
/// error and decenter around every grid EFL. Zero sigmas or zero draws
/// fall back to the exact nominal grid. Output order follows the grid.
pub fn sample_mla_perturbations(
    grid: &[f64],
    efl_error_sigma: f64,
    decenter_sigma: f64,
    per_efl: usize,
    seed: u64,
) -> Result<Vec<MlaPerturbation>> {
    if grid.is_empty() {
        return Err(Error::Config("EFL grid is empty".into()));
    }
    if efl_error_sigma < 0.0 || decenter_sigma < 0.0 {
        return Err(Error::Config("tolerance sigmas must be >= 0".into()));
    }
    if per_efl == 0 || (efl_error_sigma == 0.0 && decenter_sigma == 0.0) {
        return Ok(grid.iter().map(|&f| MlaPerturbation::nominal(f)).collect());
    }
    let mut rng = crate::rng::substream(seed, "mla-tolerance");
    let efl_dist = Normal::new(0.0, efl_error_sigma)
        .map_err(|e| Error::Config(format!("bad efl_error sigma: {e}")))?;
    let dec_dist = Normal::new(0.0, decenter_sigma)
        .map_err(|e| Error::Config(format!("bad decenter sigma: {e}")))?;
    let mut out = Vec::with_capacity(grid.len() * per_efl);
    for &efl in grid {
        for _ in 0..per_efl {
            let mut p = MlaPerturbation {
                efl,
                efl_error: efl_dist.sample(&mut rng),
                decenter: dec_dist.sample(&mut rng),
            };
            // resample the rare draw that would flip the lens sign
            while p.efl + p.efl_error <= 0.0 {
                p.efl_error = efl_dist.sample(&mut rng);
            }
            let _: f64 = rng.gen(); // keep stream alignment independent of resampling
            out.push(p);
        }
    }
    Ok(out)
}

/// Smallest spherical-aberration coefficient (waves) whose PSF shows the
/// target crosstalk one pitch away from the peak. Used to reproduce a
/// measured crosstalk level when the real aberrations are unknown.
pub fn fit_spherical_to_crosstalk(
    pupil: &PupilSpec,
    fill: f64,
    sampling: &SamplingSpec,
    pitch: f64,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Config(format!("target crosstalk must be positive, got {target}")));
    }
    let xt = |spherical: f64| -> Result<f64> {
        let mut p = *pupil;
        p.aberrations.spherical = spherical;
        let psf = psf_perturbed(&p, fill, sampling, 0.0, 0.0)?;
        let (l, r) = neighbor_crosstalk(&psf, pitch)?;
        Ok(l.max(r))
    };
    let base = xt(pupil.aberrations.spherical)?;
    if base >= target {
        return Err(Error::Physics(format!(
            "unaberrated crosstalk {base:.3e} already exceeds target {target:.3e}"
        )));
    }
    // bracket: march up in 0.02-wave steps until the target is crossed
    let mut lo = pupil.aberrations.spherical;
    let mut hi = lo;
    loop {
        hi += 0.02;
        if hi - pupil.aberrations.spherical > 2.0 {
            return Err(Error::Physics(format!(
                "no spherical coefficient below 2 waves reaches crosstalk {target:.3e}"
            )));
        }
        if xt(hi)? >= target {
            break;
        }
        lo = hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if xt(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
