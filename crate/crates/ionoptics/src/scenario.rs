//! Scenario files: one TOML document describing a reproducible run.
//!
//! Every physical quantity carries an explicit SI-unit suffix in its key
//! name (`ion_pitch_m`, `duration_fwhm_s`) so a misplaced decimal is a
//! visible config bug, not a silent unit bug. Sections are optional at
//! parse time; each command demands the sections it needs and fails with
//! exit code 2 before touching the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::diffraction::{
    fill_from_geometry, AberrationCoeffs, ChannelGeometry, PupilSpec, SamplingSpec,
};
use crate::error::{Error, Result};
use crate::powerbudget::{GateDrive, LossElement};
use crate::profiles::NoiseModel;
use crate::pulsematch::{DelayStage, PulseSpec, NOMINAL_LIGHT_SPEED};
use crate::splitter::{read_measured_csv_file, fit_tree, SplitterTree};

/// Parsed scenario plus the directory it was loaded from, so file
/// references inside the scenario resolve relative to the scenario file
/// rather than the process working directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Master seed; mandatory for any stochastic step. CLI --seed wins.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub geometry: Option<ChannelGeometry>,
    #[serde(default)]
    pub pupil: Option<PupilSection>,
    #[serde(default)]
    pub grid: Option<SamplingSpec>,
    #[serde(default)]
    pub source: Option<SourceSection>,
    #[serde(default)]
    pub splitter: Option<SplitterSection>,
    #[serde(default)]
    pub losses: Option<LossSection>,
    #[serde(default)]
    pub rabi: Option<RabiSection>,
    #[serde(default)]
    pub pulse: Option<PulseSection>,
    #[serde(default)]
    pub stages: Option<StageSection>,
    #[serde(default)]
    pub paths: Option<PathSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub crosstalk: Option<CrosstalkSection>,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Scenario {
    /// Loads and parses a scenario file. TOML errors keep the parser's
    /// line/column message and always name the file.
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut sc: Scenario = toml::from_str(&text).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        sc.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(sc)
    }

    /// Parses scenario text with file references resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Scenario> {
        let mut sc: Scenario = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario parse error: {e}")))?;
        sc.base_dir = base.to_path_buf();
        Ok(sc)
    }

    /// Resolves a file reference from the scenario against its own
    /// directory (absolute paths pass through).
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Effective seed: CLI override, else the scenario's `rng_seed`.
    pub fn seed(&self, cli_seed: Option<u64>) -> Option<u64> {
        cli_seed.or(self.rng_seed)
    }

    /// Grid section or the library default sampling.
    pub fn sampling(&self) -> SamplingSpec {
        self.grid.unwrap_or_default()
    }

    pub fn require_geometry(&self) -> Result<&ChannelGeometry> {
        self.geometry.as_ref().ok_or_else(|| missing(&self.name, "geometry"))
    }

    pub fn require_pupil(&self) -> Result<&PupilSection> {
        self.pupil.as_ref().ok_or_else(|| missing(&self.name, "pupil"))
    }

    pub fn require_source(&self) -> Result<&SourceSection> {
        self.source.as_ref().ok_or_else(|| missing(&self.name, "source"))
    }

    pub fn require_splitter(&self) -> Result<&SplitterSection> {
        self.splitter.as_ref().ok_or_else(|| missing(&self.name, "splitter"))
    }

    pub fn require_losses(&self) -> Result<&LossSection> {
        self.losses.as_ref().ok_or_else(|| missing(&self.name, "losses"))
    }

    pub fn require_pulse(&self) -> Result<&PulseSection> {
        self.pulse.as_ref().ok_or_else(|| missing(&self.name, "pulse"))
    }

    pub fn require_stages(&self) -> Result<&StageSection> {
        self.stages.as_ref().ok_or_else(|| missing(&self.name, "stages"))
    }

    pub fn require_paths(&self) -> Result<&PathSection> {
        self.paths.as_ref().ok_or_else(|| missing(&self.name, "paths"))
    }

    pub fn require_sweep(&self) -> Result<&SweepSection> {
        self.sweep.as_ref().ok_or_else(|| missing(&self.name, "sweep"))
    }

    pub fn require_analysis(&self) -> Result<&AnalysisSection> {
        self.analysis.as_ref().ok_or_else(|| missing(&self.name, "analysis"))
    }

    /// Pupil fill factor: explicit value if configured, otherwise derived
    /// from the imaging geometry (image-plane waist -> pupil truncation).
    pub fn pupil_fill(&self) -> Result<f64> {
        let pupil = self.require_pupil()?;
        if let Some(f) = pupil.pupil_fill {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Config(format!(
                    "pupil_fill must be positive, got {f}"
                )));
            }
            return Ok(f);
        }
        let geom = self.geometry.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "scenario '{}': pupil_fill omitted and no [geometry] to derive it from",
                self.name
            ))
        })?;
        fill_from_geometry(&pupil.spec(), geom)
    }
}

fn missing(name: &str, section: &str) -> Error {
    Error::Config(format!("scenario '{name}' is missing the [{section}] section"))
}

/// Objective pupil plus the beam truncation it sees.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PupilSection {
    pub numerical_aperture: f64,
    pub wavelength_m: f64,
    /// Gaussian 1/e^2 amplitude radius over the pupil radius. Omitted:
    /// derived from [geometry].
    #[serde(default)]
    pub pupil_fill: Option<f64>,
    #[serde(default)]
    pub aberrations: AberrationCoeffs,
}

impl PupilSection {
    pub fn spec(&self) -> PupilSpec {
        PupilSpec {
            numerical_aperture: self.numerical_aperture,
            wavelength: self.wavelength_m,
            aberrations: self.aberrations,
        }
    }
}

/// Light source entering the imaging path (object side).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Mode-field diameter of the per-channel fiber mode.
    pub fiber_mfd_m: f64,
    /// Emitter pitch at the object plane; enables the etendue
    /// feasibility check against the ion-plane constraint.
    #[serde(default)]
    pub array_pitch_m: Option<f64>,
}

/// Splitter tree source: exactly one of `tree_file` (fitted tree JSON),
/// `measured_csv` (per-channel powers, fitted on load), or `depth`
/// (synthetic balanced tree).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterSection {
    #[serde(default)]
    pub tree_file: Option<String>,
    #[serde(default)]
    pub measured_csv: Option<String>,
    #[serde(default)]
    pub depth: Option<usize>,
    /// Operating temperature; omitted means the tree's reference.
    #[serde(default)]
    pub temperature_c: Option<f64>,
}

impl SplitterSection {
    pub fn load_tree(&self, scenario: &Scenario) -> Result<SplitterTree> {
        let sources = [
            self.tree_file.is_some(),
            self.measured_csv.is_some(),
            self.depth.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config(
                "[splitter] needs exactly one of tree_file, measured_csv, depth".into(),
            ));
        }
        if let Some(file) = &self.tree_file {
            let path = scenario.resolve(file);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            return SplitterTree::from_json(&text);
        }
        if let Some(file) = &self.measured_csv {
            let measured = read_measured_csv_file(&scenario.resolve(file))?;
            let n = measured.len();
            if !n.is_power_of_two() || n < 2 {
                return Err(Error::Config(format!(
                    "measured splitter CSV must hold a power of two channels, got {n}"
                )));
            }
            return fit_tree(&measured, n.trailing_zeros() as usize);
        }
        SplitterTree::balanced(self.depth.unwrap())
    }
}

/// Per-channel insertion-loss ledger shared by all channels.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub input_power_w: f64,
    /// Programmable attenuation applied identically to every channel.
    #[serde(default)]
    pub aom_attenuation_db: f64,
    pub elements: Vec<LossElement>,
    /// Threshold for the how-many-channels query on the balanced curve.
    #[serde(default)]
    pub target_power_w: Option<f64>,
}

/// Two-photon drive calibration and crosstalk-to-error conversion.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSection {
    pub individual_power_w: f64,
    pub global_power_w: f64,
    /// Rabi rate measured at the two powers above, rad/s.
    pub rabi_rate_rad_per_s: f64,
    pub drive: GateDrive,
    /// Report neighbor rotation for a pi pulse (default true).
    #[serde(default = "default_true")]
    pub pi_pulse: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub duration_fwhm_s: f64,
    pub wavelength_m: f64,
    /// Defaults to the nominal 3.0e8 m/s; set the group velocity here
    /// for in-fiber path lengths.
    #[serde(default = "default_speed")]
    pub propagation_speed_m_per_s: f64,
}

fn default_speed() -> f64 {
    NOMINAL_LIGHT_SPEED
}

impl PulseSection {
    pub fn spec(&self) -> PulseSpec {
        PulseSpec {
            duration_fwhm: self.duration_fwhm_s,
            wavelength: self.wavelength_m,
            propagation_speed: self.propagation_speed_m_per_s,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub travel_m: f64,
    pub resolution_m: f64,
    /// Channels whose best visibility falls below this get a splice plan.
    pub visibility_floor: f64,
}

impl StageSection {
    pub fn stage(&self) -> DelayStage {
        DelayStage { travel: self.travel_m, resolution: self.resolution_m, position: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// Static per-channel length offsets relative to the shortest path.
    pub static_offsets_m: Vec<f64>,
    /// Half-angle between the two beams in the fringe diagnostic.
    #[serde(default = "default_half_angle")]
    pub fringe_half_angle_rad: f64,
}

fn default_half_angle() -> f64 {
    0.01
}

/// Microlens focal-length tolerance sweep.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub efl_start_m: f64,
    pub efl_stop_m: f64,
    pub efl_step_m: f64,
    /// One-sigma focal-length manufacturing error; 0 = nominal only.
    #[serde(default)]
    pub efl_error_sigma_m: f64,
    /// One-sigma lens decenter; 0 = nominal only.
    #[serde(default)]
    pub decenter_sigma_m: f64,
    /// Monte Carlo draws per grid point when sigmas are nonzero.
    #[serde(default)]
    pub samples_per_efl: usize,
}

impl SweepSection {
    /// True when the sweep draws random perturbations (and so needs the
    /// scenario seed).
    pub fn is_stochastic(&self) -> bool {
        self.samples_per_efl > 0
            && (self.efl_error_sigma_m > 0.0 || self.decenter_sigma_m > 0.0)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosstalkSection {
    /// Neighbors on each side to report.
    #[serde(default = "default_one")]
    pub neighbor_count: usize,
}

fn default_one() -> usize {
    1
}

/// Measured-profile analysis inputs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Sidecar JSON describing the exposure stack; may be overridden by
    /// the CLI --stack flag.
    #[serde(default)]
    pub stack_sidecar: Option<String>,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Half-open sample index range known to hold no beam.
    pub dark_region: [usize; 2],
    #[serde(default = "default_one")]
    pub neighbor_count: usize,
    /// Site pitch in the profile; omitted means [geometry] ion pitch.
    #[serde(default)]
    pub ion_pitch_m: Option<f64>,
}
