//! 1D intensity profiles: the common currency between the diffraction
//! model, the measurement pipeline and the fringe tools.
//!
//! A profile is a uniformly sampled nonnegative intensity trace along the
//! ion-chain axis. Positions are in meters; sample `i` sits at
//! `origin + i * pixel_pitch`. `exposure` and `saturation_level` carry the
//! acquisition context needed by HDR stitching; synthetic profiles use
//! exposure 1 and an unreachable saturation level.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    samples: Vec<f64>,
    pixel_pitch: f64,
    /// Position of sample 0 in meters.
    origin: f64,
    pub exposure: f64,
    pub saturation_level: f64,
}

/// Saturation level used for synthetic (unclippable) profiles.
pub const UNSATURABLE: f64 = f64::MAX;

impl IntensityProfile {
    /// Builds a profile from raw samples. Samples must be finite and
    /// nonnegative, the pitch positive.
    pub fn new(samples: Vec<f64>, pixel_pitch: f64, origin: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("profile needs at least 2 samples".into()));
        }
        if !(pixel_pitch > 0.0) || !pixel_pitch.is_finite() {
            return Err(Error::InvalidInput(format!(
                "pixel pitch must be positive, got {pixel_pitch}"
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::InvalidInput(format!(
                "profile samples must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(IntensityProfile {
            samples,
            pixel_pitch,
            origin,
            exposure: 1.0,
            saturation_level: UNSATURABLE,
        })
    }

    /// Samples `f(x)` at `n` points with pitch `pitch`, centered on x = 0.
    pub fn from_fn(n: usize, pitch: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let origin = -0.5 * (n as f64 - 1.0) * pitch;
        let samples = (0..n).map(|i| f(origin + i as f64 * pitch)).collect();
        IntensityProfile::new(samples, pitch, origin)
    }

    pub fn with_exposure(mut self, exposure: f64, saturation_level: f64) -> Self {
        self.exposure = exposure;
        self.saturation_level = saturation_level;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn position(&self, index: usize) -> f64 {
        self.origin + index as f64 * self.pixel_pitch
    }

    /// Last sample position.
    pub fn end(&self) -> f64 {
        self.position(self.samples.len() - 1)
    }

    /// Index and value of the maximum sample (first occurrence on ties).
    pub fn peak_sample(&self) -> (usize, f64) {
        let mut best = (0, self.samples[0]);
        for (i, &v) in self.samples.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Linear interpolation at position `x`. Errors outside the support.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        let t = (x - self.origin) / self.pixel_pitch;
        if t < 0.0 || t > (self.samples.len() - 1) as f64 {
            return Err(Error::OffsetOutsideSupport { offset_m: x });
        }
        let i = (t.floor() as usize).min(self.samples.len() - 2);
        let frac = t - i as f64;
        Ok(self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac)
    }

    /// Rescales every sample by `factor` (test fixtures scale synthetic
    /// truth profiles into count units).
    #[cfg(test)]
    pub(crate) fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.samples {
            *s *= factor;
        }
        self
    }

    /// Writes the profile as two-column CSV (position_m, intensity).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "position_m,intensity")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.position(i), s)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv output is utf8")
    }

    /// Reads a two-column CSV (position, counts). Positions must be
    /// uniformly spaced; the header row is required.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut positions = Vec::new();
        let mut counts = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidInput(format!("csv row {}: {e}", row + 2)))?;
            if rec.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "csv row {}: expected 2 columns, got {}",
                    row + 2,
                    rec.len()
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("csv row {}: bad {what} value {s:?}", row + 2))
                })
            };
            positions.push(parse(&rec[0], "position")?);
            counts.push(parse(&rec[1], "counts")?);
        }
        if positions.len() < 2 {
            return Err(Error::InvalidInput("profile csv needs at least 2 rows".into()));
        }
        let pitch = positions[1] - positions[0];
        if !(pitch > 0.0) {
            return Err(Error::InvalidInput("profile positions must ascend".into()));
        }
        for i in 1..positions.len() {
            let d = positions[i] - positions[i - 1];
            if ((d - pitch) / pitch).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "profile positions must be uniformly spaced: step {d} at row {} vs {pitch}",
                    i + 2
                )));
            }
        }
        IntensityProfile::new(counts, pitch, positions[0])
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(f))
    }
}

/// A raw 2D camera frame. Exists only as an import/render surface; all
/// analysis runs on 1D profiles.
#[derive(Debug, Clone)]
pub struct Frame2d {
    pub width: usize,
    pub height: usize,
    /// Row-major samples, `height * width` entries.
    pub samples: Vec<f64>,
}

impl Frame2d {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame dimensions {width}x{height} do not match {} samples",
                samples.len()
            )));
        }
        Ok(Frame2d { width, height, samples })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    /// Collapses to a 1D profile along the row containing the global peak.
    /// The frame is already single-channel; color inputs must be collapsed
    /// to luminance before reaching this type.
    pub fn peak_row_profile(&self, pixel_pitch: f64) -> Result<IntensityProfile> {
        let (mut peak_idx, mut peak) = (0, f64::MIN);
        for (i, &v) in self.samples.iter().enumerate() {
            if v > peak {
                peak = v;
                peak_idx = i;
            }
        }
        let row = peak_idx / self.width;
        let samples = self.samples[row * self.width..(row + 1) * self.width].to_vec();
        let origin = -0.5 * (self.width as f64 - 1.0) * pixel_pitch;
        IntensityProfile::new(samples, pixel_pitch, origin)
    }

    /// Parses a binary grayscale PGM (magic `P5`), 8 or 16 bit. 16-bit
    /// samples are big-endian per the format.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::InvalidInput(format!("pgm read failed: {e}")))?;
        let bad = |m: &str| Error::InvalidInput(format!("pgm parse: {m}"));

        let mut pos = 0usize;
        let mut token = |bytes: &[u8]| -> Result<String> {
            // skip whitespace and '#' comment lines
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("unexpected end of header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };

        if token(&bytes)? != "P5" {
            return Err(bad("magic is not P5"));
        }
        let width: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
        let height: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
        let maxval: u32 = token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        // single whitespace byte separates header from raster
        pos += 1;
        let wide = maxval > 255;
        let needed = width * height * if wide { 2 } else { 1 };
        if bytes.len() < pos + needed {
            return Err(bad("raster shorter than header promises"));
        }
        let raster = &bytes[pos..pos + needed];
        let samples: Vec<f64> = if wide {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect()
        } else {
            raster.iter().map(|&b| b as f64).collect()
        };
        Frame2d::new(width, height, samples)
    }

    pub fn read_pgm_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pgm(BufReader::new(f))
    }

    /// Writes a binary PGM. `maxval` selects 8 vs 16 bit; samples are
    /// clamped to [0, maxval] and rounded.
    pub fn write_pgm<W: Write>(&self, mut w: W, maxval: u32) -> std::io::Result<()> {
        assert!(maxval > 0 && maxval <= 65535);
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, maxval)?;
        if maxval > 255 {
            for &s in &self.samples {
                let v = s.round().clamp(0.0, maxval as f64) as u16;
                w.write_all(&v.to_be_bytes())?;
            }
        } else {
            for &s in &self.samples {
                w.write_all(&[s.round().clamp(0.0, maxval as f64) as u8])?;
            }
        }
        Ok(())
    }
}
