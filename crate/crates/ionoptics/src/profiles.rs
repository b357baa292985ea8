//! Measured-profile analysis: HDR exposure stitching, sub-pixel peak
//! location, crosstalk extraction with noise-floor flagging, and fringe
//! contrast estimation.
//!
//! The same pipeline runs on simulated profiles and on imported camera
//! data (CSV traces or grayscale PGM frames with a JSON sidecar). Color
//! sensors must be collapsed to one luminance channel before import; the
//! PGM path is already single-channel.

use std::ops::Range;
use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{Frame2d, IntensityProfile, UNSATURABLE};

/// Fraction of full scale above which a sample counts as saturated;
/// sensors roll off nonlinearly before the hard clip.
pub const SATURATION_MARGIN: f64 = 0.95;

/// Aligned frames of one scene at strictly increasing exposures.
#[derive(Debug, Clone)]
pub struct ExposureStack {
    frames: Vec<IntensityProfile>,
}

impl ExposureStack {
    pub fn new(frames: Vec<IntensityProfile>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("exposure stack has no frames".into()));
        }
        let first = &frames[0];
        for (i, f) in frames.iter().enumerate() {
            if !(f.exposure > 0.0) || !f.exposure.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "frame {i}: exposure must be positive, got {}",
                    f.exposure
                )));
            }
            if !(f.saturation_level > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "frame {i}: saturation level must be positive, got {}",
                    f.saturation_level
                )));
            }
            if i > 0 && f.exposure <= frames[i - 1].exposure {
                return Err(Error::InvalidInput(format!(
                    "frame {i}: exposures must be strictly ascending ({} after {})",
                    f.exposure,
                    frames[i - 1].exposure
                )));
            }
            let aligned = f.len() == first.len()
                && rel_close(f.pixel_pitch(), first.pixel_pitch())
                && (f.origin() - first.origin()).abs()
                    <= 1e-9 * first.pixel_pitch().max(first.origin().abs());
            if !aligned {
                return Err(Error::InvalidInput(format!(
                    "frame {i} is not on the same pixel grid as frame 0"
                )));
            }
        }
        Ok(ExposureStack { frames })
    }

    pub fn frames(&self) -> &[IntensityProfile] {
        &self.frames
    }
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Per-pixel HDR merge: the longest unsaturated exposure wins and is
/// divided by its exposure, giving a radiometrically linear profile with
/// exposure 1. A pixel saturated in every frame is unrecoverable.
pub fn hdr_stitch(stack: &ExposureStack) -> Result<IntensityProfile> {
    let frames = stack.frames();
    let n = frames[0].len();
    let mut out = vec![0.0; n];
    let mut dead: Vec<usize> = Vec::new();
    for px in 0..n {
        let mut chosen = None;
        for f in frames.iter().rev() {
            let counts = f.samples()[px];
            if counts < SATURATION_MARGIN * f.saturation_level {
                chosen = Some(counts / f.exposure);
                break;
            }
        }
        match chosen {
            Some(v) => out[px] = v,
            None => dead.push(px),
        }
    }
    if !dead.is_empty() {
        let first: Vec<usize> = dead.iter().take(8).copied().collect();
        return Err(Error::SaturatedEverywhere { count: dead.len(), first });
    }
    Ok(
        IntensityProfile::new(out, frames[0].pixel_pitch(), frames[0].origin())?
            .with_exposure(1.0, UNSATURABLE),
    )
}

/// Sensor noise terms, in the same count units as the profile samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Dark-current RMS counts.
    pub dark_noise: f64,
    /// Readout RMS counts.
    pub read_noise: f64,
    /// Poisson shot noise on the counts themselves.
    pub shot_noise: bool,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.dark_noise < 0.0 || self.read_noise < 0.0 {
            return Err(Error::Config("noise RMS terms must be >= 0".into()));
        }
        Ok(())
    }

    /// RMS of the additive terms.
    pub fn additive_rms(&self) -> f64 {
        (self.dark_noise * self.dark_noise + self.read_noise * self.read_noise).sqrt()
    }

    /// Predicted RMS at a given signal level.
    fn rms_at(&self, level: f64) -> f64 {
        let shot_var = if self.shot_noise { level.max(0.0) } else { 0.0 };
        (self.dark_noise * self.dark_noise + self.read_noise * self.read_noise + shot_var)
            .sqrt()
    }
}

/// Draws one noisy realization of a profile. Shot noise replaces each
/// sample with a Poisson draw of the same mean; dark and read noise add
/// Gaussian counts. Results clamp at zero, so dark regions should carry
/// a bias level well above the noise RMS to stay statistically faithful.
pub fn apply_noise(
    profile: &IntensityProfile,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<IntensityProfile> {
    noise.validate()?;
    let additive = noise.additive_rms();
    let gauss = if additive > 0.0 {
        Some(Normal::new(0.0, additive).expect("validated sigma"))
    } else {
        None
    };
    let samples = profile
        .samples()
        .iter()
        .map(|&v| {
            let mut out = if noise.shot_noise && v > 0.0 {
                Poisson::new(v).expect("positive mean").sample(rng)
            } else {
                v
            };
            if let Some(g) = &gauss {
                out += g.sample(rng);
            }
            out.max(0.0)
        })
        .collect();
    Ok(IntensityProfile::new(samples, profile.pixel_pitch(), profile.origin())?
        .with_exposure(profile.exposure, profile.saturation_level))
}

/// Beam 1/e^2 intensity half-width, from the first crossing on each side
/// of the peak. Falls back to the full span when the profile never drops
/// below 1/e^2 of the peak.
fn beam_halfwidth(profile: &IntensityProfile) -> (usize, f64) {
    let (peak_idx, peak) = profile.peak_sample();
    let target = peak * (-2.0f64).exp();
    let pitch = profile.pixel_pitch();
    let mut best: Option<f64> = None;
    for k in (0..peak_idx).rev() {
        if profile.samples()[k] < target {
            best = Some((peak_idx - k) as f64 * pitch);
            break;
        }
    }
    for k in peak_idx + 1..profile.len() {
        if profile.samples()[k] < target {
            let w = (k - peak_idx) as f64 * pitch;
            best = Some(best.map_or(w, |b| b.max(w)));
            break;
        }
    }
    (peak_idx, best.unwrap_or_else(|| profile.end() - profile.origin()))
}

/// Relative noise floor: the larger of the dark-region scatter (standard
/// deviation about the region mean, so a bias level does not count as
/// noise) and the noise model's additive RMS, divided by the peak value.
/// The dark region must lie at least 6 beam widths from the peak.
pub fn noise_floor(
    profile: &IntensityProfile,
    noise: &NoiseModel,
    dark_region: Range<usize>,
) -> Result<f64> {
    noise.validate()?;
    if dark_region.is_empty() || dark_region.end > profile.len() {
        return Err(Error::InvalidRegion(format!(
            "dark region {dark_region:?} outside profile of {} samples",
            profile.len()
        )));
    }
    let (peak_idx, peak) = profile.peak_sample();
    if !(peak > 0.0) {
        return Err(Error::Physics("profile has no positive peak".into()));
    }
    let (_, halfwidth) = beam_halfwidth(profile);
    let x_peak = profile.position(peak_idx);
    for i in dark_region.clone() {
        if (profile.position(i) - x_peak).abs() < 6.0 * halfwidth {
            return Err(Error::InvalidRegion(format!(
                "dark region sample {i} is within 6 beam widths of the peak"
            )));
        }
    }
    let m = dark_region.len() as f64;
    let mean: f64 = profile.samples()[dark_region.clone()].iter().sum::<f64>() / m;
    let var: f64 = profile.samples()[dark_region]
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / m;
    Ok(var.sqrt().max(noise.additive_rms()) / peak)
}

/// Parabola through three equally spaced samples: offset of the vertex
/// from the center point (in sample units, clamped to half a step) and
/// the vertex value.
fn quadratic_vertex(y_minus: f64, y_0: f64, y_plus: f64) -> (f64, f64) {
    let denom = y_minus - 2.0 * y_0 + y_plus;
    if denom == 0.0 {
        return (0.0, y_0);
    }
    let delta = (0.5 * (y_minus - y_plus) / denom).clamp(-0.5, 0.5);
    let value = y_0 - 0.25 * (y_minus - y_plus) * delta;
    (delta, value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEntry {
    #[serde(rename = "offset_m")]
    pub offset: f64,
    /// I(offset)/I(peak); when the measured value sits below the noise
    /// floor this holds the floor itself, as an upper bound.
    pub ratio: f64,
    /// One-sigma uncertainty propagated from the noise model.
    pub uncertainty: f64,
    pub below_noise_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosstalkReport {
    #[serde(rename = "peak_position_m")]
    pub peak_position: f64,
    pub peak_value: f64,
    pub ratios: Vec<RatioEntry>,
    pub noise_floor: f64,
}

/// Locates the peak to sub-pixel precision and reads relative intensity
/// at +-k*pitch for k = 1..=neighbor_count. Values below the noise floor
/// are reported as the floor and flagged.
pub fn extract_crosstalk(
    profile: &IntensityProfile,
    ion_pitch: f64,
    neighbor_count: usize,
    noise: &NoiseModel,
    dark_region: Range<usize>,
) -> Result<CrosstalkReport> {
    if !(ion_pitch > 0.0) || neighbor_count == 0 {
        return Err(Error::Config(
            "crosstalk extraction needs a positive pitch and neighbor_count >= 1".into(),
        ));
    }
    let (peak_idx, _) = profile.peak_sample();
    if peak_idx == 0 || peak_idx + 1 == profile.len() {
        return Err(Error::PeakAtEdge);
    }
    let s = profile.samples();
    let (delta, peak_value) =
        quadratic_vertex(s[peak_idx - 1], s[peak_idx], s[peak_idx + 1]);
    let peak_position = profile.position(peak_idx) + delta * profile.pixel_pitch();
    if !(peak_value > 0.0) {
        return Err(Error::Physics("profile has no positive peak".into()));
    }
    let floor = noise_floor(profile, noise, dark_region)?;
    let reach = neighbor_count as f64 * ion_pitch;
    for bound in [peak_position - reach, peak_position + reach] {
        if bound < profile.origin() || bound > profile.end() {
            return Err(Error::OffsetOutsideSupport { offset_m: bound - peak_position });
        }
    }
    let sigma_peak = noise.rms_at(peak_value);
    let mut ratios = Vec::with_capacity(2 * neighbor_count);
    for k in -(neighbor_count as i64)..=neighbor_count as i64 {
        if k == 0 {
            continue;
        }
        let offset = k as f64 * ion_pitch;
        let level = profile.value_at(peak_position + offset)?;
        let raw = level / peak_value;
        let sigma_level = noise.rms_at(level);
        let uncertainty = if level > 0.0 {
            raw * ((sigma_level / level).powi(2) + (sigma_peak / peak_value).powi(2)).sqrt()
        } else {
            floor
        };
        let below = raw < floor;
        ratios.push(RatioEntry {
            offset,
            ratio: if below { floor } else { raw },
            uncertainty,
            below_noise_floor: below,
        });
    }
    Ok(CrosstalkReport { peak_position, peak_value, ratios, noise_floor: floor })
}

/// Fringe contrast (Imax - Imin)/(Imax + Imin), estimated per period and
/// averaged so a slow envelope does not wash out the result. A uniform
/// profile has contrast 0; anything structured needs at least three
/// resolvable periods.
pub fn fringe_contrast(profile: &IntensityProfile) -> Result<f64> {
    let s = profile.samples();
    let n = s.len();
    let mx = s.iter().cloned().fold(f64::MIN, f64::max);
    let mn = s.iter().cloned().fold(f64::MAX, f64::min);
    if mx - mn <= 1e-12 * mx.abs().max(1e-300) {
        return Ok(0.0);
    }
    if n < 16 {
        return Err(Error::NoPeriodicity);
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let ac: Vec<f64> = s.iter().map(|&v| v - mean).collect();

    // dominant spatial frequency from the DFT of the detrended signal
    let mut buf: Vec<Complex<f64>> = ac.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let mut k_star = 1;
    let mut best = 0.0;
    let mut total = 0.0;
    for (k, c) in buf.iter().enumerate().take(half + 1).skip(1) {
        let p = c.norm_sqr();
        total += p;
        if p > best {
            best = p;
            k_star = k;
        }
    }
    if k_star < 3 || best < 0.1 * total {
        return Err(Error::NoPeriodicity);
    }

    // refine the frequency by maximizing the projection power nearby
    let power = |omega: f64| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &v) in ac.iter().enumerate() {
            let arg = omega * j as f64;
            re += v * arg.cos();
            im -= v * arg.sin();
        }
        re * re + im * im
    };
    let tau = 2.0 * std::f64::consts::PI;
    let (mut a, mut b) = (
        tau * (k_star as f64 - 1.0) / n as f64,
        tau * (k_star as f64 + 1.0) / n as f64,
    );
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut fc, mut fd) = (power(c), power(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = power(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = power(d);
        }
    }
    let omega = 0.5 * (a + b);
    let period = tau / omega;
    let full_periods = (n as f64 / period + 1e-9).floor() as usize;
    if full_periods < 3 {
        return Err(Error::NoPeriodicity);
    }

    // per-period envelope: quadratic-refined extrema of each cycle
    let refined = |idx: usize| -> f64 {
        if idx == 0 || idx + 1 == n {
            s[idx]
        } else {
            quadratic_vertex(s[idx - 1], s[idx], s[idx + 1]).1
        }
    };
    let mut acc = 0.0;
    let mut used = 0;
    for m in 0..full_periods {
        let lo = (m as f64 * period).ceil() as usize;
        let hi = (((m + 1) as f64 * period).floor() as usize).min(n - 1);
        if hi <= lo {
            continue;
        }
        let mut hi_idx = lo;
        let mut lo_idx = lo;
        for j in lo..=hi {
            if s[j] > s[hi_idx] {
                hi_idx = j;
            }
            if s[j] < s[lo_idx] {
                lo_idx = j;
            }
        }
        let upper = refined(hi_idx);
        let lower = refined(lo_idx).max(0.0);
        if upper + lower > 0.0 {
            acc += (upper - lower) / (upper + lower);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoPeriodicity);
    }
    Ok(acc / used as f64)
}

/// Box-averages onto a coarser pixel grid, modeling a sensor whose pixel
/// pitch exceeds the source sampling. The first coarse pixel is centered
/// on the first fine sample.
pub fn downsample_to_pitch(
    profile: &IntensityProfile,
    new_pitch: f64,
) -> Result<IntensityProfile> {
    let pitch = profile.pixel_pitch();
    if !(new_pitch > pitch) {
        return Err(Error::Config(format!(
            "downsample pitch {new_pitch} must exceed the source pitch {pitch}"
        )));
    }
    let n_new = ((profile.end() - profile.origin()) / new_pitch).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n_new);
    for j in 0..n_new {
        let center = profile.origin() + j as f64 * new_pitch;
        let lo = center - 0.5 * new_pitch;
        let hi = center + 0.5 * new_pitch;
        let (mut sum, mut cnt) = (0.0, 0usize);
        for i in 0..profile.len() {
            let x = profile.position(i);
            if x >= lo && x < hi {
                sum += profile.samples()[i];
                cnt += 1;
            }
        }
        samples.push(if cnt > 0 { sum / cnt as f64 } else { 0.0 });
    }
    Ok(IntensityProfile::new(samples, new_pitch, profile.origin())?
        .with_exposure(profile.exposure, profile.saturation_level))
}

/// Sidecar JSON describing a stack of frame files: exposures, saturation
/// levels, and (for image formats that do not carry it) the pixel pitch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSidecar {
    pub frames: Vec<SidecarFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarFrame {
    /// Frame file, resolved relative to the sidecar's directory.
    pub file: String,
    pub exposure: f64,
    pub saturation_level: f64,
    /// Required for PGM frames; CSV traces carry their own positions.
    #[serde(default)]
    pub pixel_pitch_m: Option<f64>,
}

/// Loads a sidecar-described stack. CSV frames are 1D traces; PGM frames
/// are collapsed to the row through their global peak.
pub fn load_stack(sidecar_path: &Path) -> Result<ExposureStack> {
    let text = std::fs::read_to_string(sidecar_path)
        .map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: StackSidecar = serde_json::from_str(&text).map_err(|e| Error::ConfigFile {
        path: sidecar_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if sidecar.frames.is_empty() {
        return Err(Error::ConfigFile {
            path: sidecar_path.to_path_buf(),
            message: "sidecar lists no frames".into(),
        });
    }
    let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
    let mut frames = Vec::with_capacity(sidecar.frames.len());
    for entry in &sidecar.frames {
        let path = dir.join(&entry.file);
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        let profile = match ext.as_str() {
            "pgm" => {
                let pitch = entry.pixel_pitch_m.ok_or_else(|| Error::ConfigFile {
                    path: sidecar_path.to_path_buf(),
                    message: format!("frame {} is a PGM and needs pixel_pitch_m", entry.file),
                })?;
                Frame2d::read_pgm_file(&path)?.peak_row_profile(pitch)?
            }
            "csv" => IntensityProfile::read_csv_file(&path)?,
            other => {
                return Err(Error::ConfigFile {
                    path: sidecar_path.to_path_buf(),
                    message: format!(
                        "frame {}: unsupported extension {other:?} (use .csv or .pgm)",
                        entry.file
                    ),
                })
            }
        };
        frames.push(profile.with_exposure(entry.exposure, entry.saturation_level));
    }
    ExposureStack::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::substream;

    const PEAK_COUNTS: f64 = 4000.0;
    const SAT: f64 = 4096.0;

    fn gaussian_truth(n: usize, pitch: f64, w: f64, pedestal: f64) -> IntensityProfile {
        IntensityProfile::from_fn(n, pitch, |x| {
            let core = (-2.0 * (x / w) * (x / w)).exp();
            let wide = (-2.0 * (x / (20.0 * w)) * (x / (20.0 * w))).exp();
            core + pedestal * wide
        })
        .unwrap()
    }

    /// Camera model: counts = clip(truth * exposure), quantization ignored.
    fn render(truth: &IntensityProfile, exposure: f64) -> IntensityProfile {
        let samples = truth
            .samples()
            .iter()
            .map(|&v| (v * exposure).min(SAT))
            .collect();
        IntensityProfile::new(samples, truth.pixel_pitch(), truth.origin())
            .unwrap()
            .with_exposure(exposure, SAT)
    }

    fn render_stack(truth: &IntensityProfile, exposures: &[f64]) -> ExposureStack {
        ExposureStack::new(exposures.iter().map(|&e| render(truth, e)).collect()).unwrap()
    }

    #[test]
    fn single_frame_stitch_divides_by_exposure() {
        let truth = gaussian_truth(501, 0.1e-6, 0.9e-6, 0.0);
        let frame = render(&truth, 0.5);
        let out = hdr_stitch(&ExposureStack::new(vec![frame.clone()]).unwrap()).unwrap();
        for (o, f) in out.samples().iter().zip(frame.samples()) {
            assert_relative_eq!(*o, f / 0.5, max_relative = 1e-12);
        }
        assert_eq!(out.exposure, 1.0);
    }

    #[test]
    fn stitch_prefers_the_longest_unsaturated_exposure() {
        let mk = |counts: f64, exposure: f64| {
            IntensityProfile::new(vec![counts, 10.0], 1e-6, 0.0)
                .unwrap()
                .with_exposure(exposure, 1000.0)
        };
        let stack = ExposureStack::new(vec![mk(100.0, 1.0), mk(1000.0, 10.0)]).unwrap();
        let out = hdr_stitch(&stack).unwrap();
        // pixel 0 saturates at 10x, so the 1x reading wins: 100/1
        assert_relative_eq!(out.samples()[0], 100.0, max_relative = 1e-12);
        // pixel 1 is clean at 10x, the longest exposure wins: 10/10
        assert_relative_eq!(out.samples()[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fully_saturated_pixels_are_reported_with_positions() {
        let truth = IntensityProfile::new(vec![1.0, 5000.0, 5000.0, 1.0], 1e-6, 0.0).unwrap();
        let stack = render_stack(&truth, &[1.0, 10.0]);
        let err = hdr_stitch(&stack).unwrap_err();
        match err {
            Error::SaturatedEverywhere { count, first } => {
                assert_eq!(count, 2);
                assert_eq!(first, vec![1, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stitch_is_invariant_under_consistent_exposure_rescaling() {
        let truth = gaussian_truth(401, 0.1e-6, 0.9e-6, 1e-3);
        let truth = truth.scaled(PEAK_COUNTS);
        let base = render_stack(&truth, &[0.25, 2.0, 16.0]);
        let scaled_frames: Vec<IntensityProfile> = base
            .frames()
            .iter()
            .map(|f| {
                let s = f.samples().iter().map(|&v| v * 3.0).collect();
                IntensityProfile::new(s, f.pixel_pitch(), f.origin())
                    .unwrap()
                    .with_exposure(f.exposure * 3.0, f.saturation_level * 3.0)
            })
            .collect();
        let a = hdr_stitch(&base).unwrap();
        let b = hdr_stitch(&ExposureStack::new(scaled_frames).unwrap()).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn stack_construction_rejects_bad_input() {
        let f = |e: f64| {
            IntensityProfile::new(vec![1.0, 2.0], 1e-6, 0.0)
                .unwrap()
                .with_exposure(e, 100.0)
        };
        assert!(ExposureStack::new(vec![]).is_err());
        assert!(ExposureStack::new(vec![f(2.0), f(1.0)]).is_err());
        assert!(ExposureStack::new(vec![f(1.0), f(1.0)]).is_err());
        let other_grid = IntensityProfile::new(vec![1.0, 2.0, 3.0], 1e-6, 0.0)
            .unwrap()
            .with_exposure(2.0, 100.0);
        assert!(ExposureStack::new(vec![f(1.0), other_grid]).is_err());
    }

    #[test]
    fn stitched_stack_recovers_ground_truth_through_the_pedestal() {
        // 1e-4 pedestal needs the longest exposure; the core needs the
        // shortest (peak counts 2000 < 0.95 * 4096 there)
        let truth = gaussian_truth(2001, 0.05e-6, 0.9e-6, 1e-4).scaled(PEAK_COUNTS);
        let stack = render_stack(&truth, &[0.5, 5.0, 50.0, 500.0]);
        let out = hdr_stitch(&stack).unwrap();
        for (o, t) in out.samples().iter().zip(truth.samples()) {
            assert!((o - t).abs() <= 0.01 * t.abs().max(1e-12), "{o} vs {t}");
        }
    }

    #[test]
    fn gaussian_crosstalk_is_symmetric_and_matches_closed_form() {
        let w = 0.9e-6;
        let truth = gaussian_truth(4001, 0.02e-6, w, 0.0);
        let report =
            extract_crosstalk(&truth, 4e-6, 1, &NoiseModel::default(), 0..200).unwrap();
        let expected = (-2.0 * (4e-6f64 / w) * (4e-6 / w)).exp();
        assert_relative_eq!(report.ratios[0].ratio, expected, max_relative = 0.05);
        assert_relative_eq!(
            report.ratios[0].ratio,
            report.ratios[1].ratio,
            max_relative = 1e-9
        );
        assert!(!report.ratios[0].below_noise_floor);
        assert_relative_eq!(report.peak_position, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_tails_drop_below_any_realistic_noise_floor() {
        let truth = gaussian_truth(4001, 0.02e-6, 0.9e-6, 0.0).scaled(PEAK_COUNTS);
        let noise = NoiseModel { dark_noise: 2.0, read_noise: 1.5, shot_noise: false };
        let report = extract_crosstalk(&truth, 4e-6, 1, &noise, 0..200).unwrap();
        assert!(report.ratios.iter().all(|r| r.below_noise_floor));
        // flagged entries report the floor itself as the upper bound
        assert_relative_eq!(report.ratios[0].ratio, report.noise_floor, epsilon = 1e-15);
    }

    #[test]
    fn off_grid_peak_is_recovered_to_subpixel_precision() {
        let w = 0.9e-6;
        let shift = 0.037e-6; // deliberately between samples
        let truth = IntensityProfile::from_fn(2001, 0.05e-6, |x| {
            (-2.0 * ((x - shift) / w) * ((x - shift) / w)).exp()
        })
        .unwrap();
        let report =
            extract_crosstalk(&truth, 4e-6, 1, &NoiseModel::default(), 0..100).unwrap();
        assert!((report.peak_position - shift).abs() < 0.01e-6);
    }

    #[test]
    fn monotone_profile_has_no_interior_peak() {
        // positions are centered on zero; keep the ramp positive
        let ramp = IntensityProfile::from_fn(64, 1e-6, |x| 2.0 + x * 1e4).unwrap();
        assert!(matches!(
            extract_crosstalk(&ramp, 2e-6, 1, &NoiseModel::default(), 0..4).unwrap_err(),
            Error::PeakAtEdge
        ));
    }

    #[test]
    fn crosstalk_reach_must_fit_inside_the_profile() {
        let truth = gaussian_truth(401, 0.05e-6, 0.9e-6, 0.0);
        let err = extract_crosstalk(&truth, 15e-6, 1, &NoiseModel::default(), 0..20)
            .unwrap_err();
        assert!(matches!(err, Error::OffsetOutsideSupport { .. }));
    }

    #[test]
    fn noise_floor_of_clean_profile_is_zero() {
        let truth = gaussian_truth(2001, 0.05e-6, 0.9e-6, 0.0);
        let floor = noise_floor(&truth, &NoiseModel::default(), 0..200).unwrap();
        assert!(floor < 1e-15, "floor {floor}");
    }

    #[test]
    fn noise_floor_tracks_injected_sigma() {
        // bias keeps the zero-clamp from biasing the dark statistics
        let sigma = 40.0;
        let truth = IntensityProfile::from_fn(4001, 0.05e-6, |x| {
            PEAK_COUNTS * (-2.0 * (x / 0.9e-6) * (x / 0.9e-6)).exp() + 8.0 * sigma
        })
        .unwrap();
        let injected = NoiseModel { dark_noise: sigma, read_noise: 0.0, shot_noise: false };
        let mut rng = substream(23, "noise-floor-test");
        let noisy = apply_noise(&truth, &injected, &mut rng).unwrap();
        // floor from measured scatter alone: pass a blank model
        let floor = noise_floor(&noisy, &NoiseModel::default(), 0..1200).unwrap();
        let expected = sigma / (PEAK_COUNTS + 8.0 * sigma);
        assert!(
            (floor - expected).abs() <= 0.2 * expected,
            "floor {floor} vs sigma/peak {expected}"
        );
        // supplying the model can only raise the floor, and it stays
        // consistent with sigma/peak
        let floor_model = noise_floor(&noisy, &injected, 0..1200).unwrap();
        assert!(floor_model >= floor);
        assert!((floor_model - expected).abs() <= 0.2 * expected);
    }

    #[test]
    fn noise_floor_scales_linearly_with_sigma() {
        let base = 20.0;
        let mut floors = Vec::new();
        for (i, mult) in [1.0, 2.0, 4.0].into_iter().enumerate() {
            let sigma = base * mult;
            let truth = IntensityProfile::from_fn(4001, 0.05e-6, |x| {
                PEAK_COUNTS * (-2.0 * (x / 0.9e-6) * (x / 0.9e-6)).exp() + 10.0 * sigma
            })
            .unwrap();
            let injected =
                NoiseModel { dark_noise: sigma, read_noise: 0.0, shot_noise: false };
            let mut rng = substream(100 + i as u64, "noise-slope");
            let noisy = apply_noise(&truth, &injected, &mut rng).unwrap();
            floors.push(noise_floor(&noisy, &NoiseModel::default(), 0..1200).unwrap());
        }
        let slope21 = floors[1] / floors[0];
        let slope42 = floors[2] / floors[1];
        assert!((slope21 - 2.0).abs() < 0.2 * 2.0, "slope {slope21}");
        assert!((slope42 - 2.0).abs() < 0.2 * 2.0, "slope {slope42}");
    }

    #[test]
    fn dark_region_near_the_beam_is_rejected() {
        let truth = gaussian_truth(2001, 0.05e-6, 0.9e-6, 0.0);
        // center of the array is the peak itself
        let err = noise_floor(&truth, &NoiseModel::default(), 950..1050).unwrap_err();
        assert!(matches!(err, Error::InvalidRegion(_)));
        let err = noise_floor(&truth, &NoiseModel::default(), 0..0).unwrap_err();
        assert!(matches!(err, Error::InvalidRegion(_)));
        let err = noise_floor(&truth, &NoiseModel::default(), 1990..2010).unwrap_err();
        assert!(matches!(err, Error::InvalidRegion(_)));
    }

    #[test]
    fn uniform_profile_has_zero_contrast() {
        let flat = IntensityProfile::new(vec![3.25; 640], 1e-6, 0.0).unwrap();
        assert_eq!(fringe_contrast(&flat).unwrap(), 0.0);
    }

    #[test]
    fn plain_cosine_contrast_is_exact() {
        let n = 1024;
        let per = 128.0;
        let tau = 2.0 * std::f64::consts::PI;
        let samples: Vec<f64> =
            (0..n).map(|j| 1.0 + 0.5 * (tau * j as f64 / per).cos()).collect();
        let p = IntensityProfile::new(samples, 1e-6, 0.0).unwrap();
        assert_relative_eq!(fringe_contrast(&p).unwrap(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn contrast_survives_a_slow_envelope_and_offgrid_phase() {
        let n = 2048;
        let per = 97.3; // deliberately incommensurate with the grid
        let tau = 2.0 * std::f64::consts::PI;
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let env = 1.0 + 0.2 * (j as f64 / n as f64); // slow ramp
                env * (1.0 + 0.7 * (tau * j as f64 / per + 0.91).cos())
            })
            .collect();
        let p = IntensityProfile::new(samples, 1e-6, 0.0).unwrap();
        let c = fringe_contrast(&p).unwrap();
        assert_relative_eq!(c, 0.7, max_relative = 5e-3);
    }

    #[test]
    fn too_few_periods_is_not_periodicity() {
        let n = 1024;
        let tau = 2.0 * std::f64::consts::PI;
        // two periods over the whole window
        let samples: Vec<f64> =
            (0..n).map(|j| 1.0 + 0.5 * (tau * 2.0 * j as f64 / n as f64).cos()).collect();
        let p = IntensityProfile::new(samples, 1e-6, 0.0).unwrap();
        assert!(matches!(fringe_contrast(&p).unwrap_err(), Error::NoPeriodicity));
    }

    #[test]
    fn broadband_noise_is_not_periodicity() {
        let mut rng = substream(7, "contrast-noise");
        let samples: Vec<f64> = (0..512).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = IntensityProfile::new(samples, 1e-6, 0.0).unwrap();
        assert!(matches!(fringe_contrast(&p).unwrap_err(), Error::NoPeriodicity));
    }

    #[test]
    fn fringe_round_trip_with_the_pulse_model() {
        use crate::pulsematch::{fringe_pattern, visibility, PulseSpec};
        let pulse = PulseSpec::reference();
        // mismatch chosen so V is close to 0.8
        let mismatch = 1.7e-3;
        let v = visibility(&pulse, mismatch);
        let pattern = fringe_pattern(&pulse, mismatch, 0.01).unwrap();
        assert_relative_eq!(fringe_contrast(&pattern).unwrap(), v, epsilon = 1e-6);
    }

    #[test]
    fn coarse_pixels_bias_crosstalk_upward_and_predictably() {
        let w = 0.9e-6;
        let pedestal = 1e-4;
        let fine_pitch = 0.02e-6;
        let coarse_pitch = 1.12e-6;
        let truth = gaussian_truth(8001, fine_pitch, w, pedestal);
        let fine = extract_crosstalk(&truth, 4e-6, 1, &NoiseModel::default(), 0..400).unwrap();
        let coarse_profile = downsample_to_pitch(&truth, coarse_pitch).unwrap();
        let coarse =
            extract_crosstalk(&coarse_profile, 4e-6, 1, &NoiseModel::default(), 0..7).unwrap();
        let r_fine = fine.ratios[1].ratio;
        let r_coarse = coarse.ratios[1].ratio;
        assert!(
            r_coarse >= r_fine * 0.999,
            "coarse {r_coarse} should not undershoot fine {r_fine}"
        );
        // worst-grid-phase resampling bound. The reported peak value is
        // at least the box average half a pixel off the true peak
        // (quadratic refinement only raises the max sample), and the
        // neighbor reading cannot exceed the box average a full pixel
        // inward of 4 um, where the pedestal is largest.
        let box_avg = |center: f64| {
            let steps = 101;
            let mut acc = 0.0;
            for i in 0..steps {
                let x = center + coarse_pitch * ((i as f64 + 0.5) / steps as f64 - 0.5);
                let core = (-2.0 * (x / w) * (x / w)).exp();
                let wide = (-2.0 * (x / (20.0 * w)) * (x / (20.0 * w))).exp();
                acc += core + pedestal * wide;
            }
            acc / steps as f64
        };
        let bound = box_avg(4e-6 - coarse_pitch) / box_avg(coarse_pitch / 2.0);
        assert!(
            r_coarse <= bound,
            "coarse ratio {r_coarse} exceeds resampling bound {bound}"
        );
    }

    #[test]
    fn downsampling_requires_a_coarser_pitch() {
        let truth = gaussian_truth(101, 1e-6, 5e-6, 0.0);
        assert!(downsample_to_pitch(&truth, 0.5e-6).is_err());
    }

    #[test]
    fn sidecar_stack_loads_csv_and_pgm_frames() {
        use std::io::Write as _;
        let dir = tempfile::tempdir().unwrap();
        let truth = gaussian_truth(301, 0.5e-6, 3e-6, 0.0).scaled(200.0);

        let csv_path = dir.path().join("short.csv");
        std::fs::write(&csv_path, render(&truth, 1.0).to_csv_string()).unwrap();

        // 16-bit PGM, 3 rows, beam along the middle row
        let pgm_path = dir.path().join("long.pgm");
        let long = render(&truth, 10.0);
        let w = long.len();
        let mut raster: Vec<f64> = vec![0.0; w * 3];
        raster[w..2 * w].copy_from_slice(long.samples());
        let frame = Frame2d::new(w, 3, raster).unwrap();
        let mut fh = std::fs::File::create(&pgm_path).unwrap();
        frame.write_pgm(&mut fh, 65535).unwrap();
        fh.flush().unwrap();

        let sidecar_path = dir.path().join("stack.json");
        std::fs::write(
            &sidecar_path,
            serde_json::json!({
                "frames": [
                    {"file": "short.csv", "exposure": 1.0, "saturation_level": 4096.0},
                    {"file": "long.pgm", "exposure": 10.0, "saturation_level": 65535.0,
                     "pixel_pitch_m": 0.5e-6},
                ]
            })
            .to_string(),
        )
        .unwrap();

        let stack = load_stack(&sidecar_path).unwrap();
        assert_eq!(stack.frames().len(), 2);
        assert_eq!(stack.frames()[1].exposure, 10.0);
        // PGM quantizes to integers; the stitch should still be close
        let stitched = hdr_stitch(&stack).unwrap();
        let peak = stitched.samples().iter().cloned().fold(f64::MIN, f64::max);
        assert_relative_eq!(peak, 200.0, max_relative = 0.01);

        let missing = dir.path().join("nope.json");
        assert!(matches!(load_stack(&missing).unwrap_err(), Error::Io { .. }));

        std::fs::write(
            &sidecar_path,
            serde_json::json!({
                "frames": [
                    {"file": "long.pgm", "exposure": 1.0, "saturation_level": 65535.0}
                ]
            })
            .to_string(),
        )
        .unwrap();
        assert!(matches!(
            load_stack(&sidecar_path).unwrap_err(),
            Error::ConfigFile { .. }
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn stitch_output_is_always_linear_in_the_truth(
                scale in 0.1..50.0f64,
                w in 0.5e-6..3e-6f64,
            ) {
                let truth = gaussian_truth(401, 0.1e-6, w, 1e-3).scaled(PEAK_COUNTS * scale);
                // exposures chosen so every pixel stays clean somewhere
                let stack = render_stack(&truth, &[1e-3, 0.1, 1.0]);
                let out = hdr_stitch(&stack).unwrap();
                for (o, t) in out.samples().iter().zip(truth.samples()) {
                    prop_assert!((o - t).abs() <= 1e-9 * t.abs().max(1.0));
                }
            }

            #[test]
            fn cosine_contrast_matches_amplitude(v in 0.05..1.0f64) {
                let n = 1024;
                let tau = 2.0 * std::f64::consts::PI;
                let samples: Vec<f64> = (0..n)
                    .map(|j| 1.0 + v * (tau * j as f64 / 64.0).cos())
                    .collect();
                let p = IntensityProfile::new(samples, 1e-6, 0.0).unwrap();
                let c = fringe_contrast(&p).unwrap();
                prop_assert!((c - v).abs() <= 1e-6);
            }
        }
    }
}
