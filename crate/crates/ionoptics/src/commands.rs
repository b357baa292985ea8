//! Command implementations behind the thin CLI binary.
//!
//! Every command computes all of its outputs in memory first and only
//! then touches the filesystem, so an invalid scenario never leaves a
//! partial output directory behind. Writes go through a temp-file +
//! rename pair, and all content is rendered with shortest-round-trip
//! float formatting, so identical scenario + seed reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::beamopt::{beam_from_mfd, lagrange_feasible, LagrangeBudget};
use crate::diffraction::{
    efl_grid, mla_tolerance_sweep, psf_1d, sample_mla_perturbations, select_best_efl,
    AberrationCoeffs, MlaPerturbation, SweepRow,
};
use crate::error::{Error, Result};
use crate::powerbudget::{
    balanced_power_curve, crosstalk_rabi_error, delivered_power, max_channels_at_power,
    neighbor_rotation, ChannelBudget, GateDrive, LossElement, RabiModel,
};
use crate::profile::IntensityProfile;
use crate::profiles::{extract_crosstalk, hdr_stitch, load_stack, CrosstalkReport, NoiseModel};
use crate::pulsematch::{fringe_pattern, optimize_stage, splice_plan, ChannelPath, StageSolution};
use crate::scenario::Scenario;
use crate::splitter::{fit_tree, forward_powers, read_measured_csv_file};

/// Output encoding for tabular artifacts. Structured reports are always
/// JSON; tables default to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// In-memory output set; nothing is written until `commit`.
struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Config(format!("cannot encode {name}: {e}")))?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    /// A table as `base.csv` (hand-rendered rows) or `base.json`
    /// (serialized row array), per the requested format.
    fn add_table<T: Serialize>(
        &mut self,
        base: &str,
        format: TableFormat,
        header: &str,
        rows: &[T],
        csv_row: impl Fn(&T) -> String,
    ) -> Result<()> {
        match format {
            TableFormat::Csv => {
                let mut text = String::with_capacity(rows.len() * 32);
                text.push_str(header);
                text.push('\n');
                for r in rows {
                    text.push_str(&csv_row(r));
                    text.push('\n');
                }
                self.add(format!("{base}.csv"), text);
                Ok(())
            }
            TableFormat::Json => self.add_json(&format!("{base}.json"), &rows),
        }
    }

    /// Creates the directory and writes every file via temp + rename.
    fn commit(self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, content) in &self.files {
            let target = out_dir.join(name);
            let tmp = out_dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// A profile rendered as a position/intensity table.
#[derive(Serialize)]
struct ProfilePoint {
    position_m: f64,
    intensity: f64,
}

fn profile_rows(profile: &IntensityProfile) -> Vec<ProfilePoint> {
    profile
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &s)| ProfilePoint { position_m: profile.position(i), intensity: s })
        .collect()
}

fn add_profile_table(
    out: &mut Outputs,
    base: &str,
    format: TableFormat,
    profile: &IntensityProfile,
) -> Result<()> {
    out.add_table(
        base,
        format,
        "position_m,intensity",
        &profile_rows(profile),
        |p| format!("{},{}", p.position_m, p.intensity),
    )
}

// ---------------------------------------------------------------- budget

#[derive(Serialize)]
struct ChannelRow {
    channel: usize,
    split_fraction: f64,
    delivered_w: f64,
    sigma_db: f64,
    lower_w: f64,
    upper_w: f64,
}

#[derive(Serialize)]
struct BudgetReport<'a> {
    scenario: &'a str,
    input_power_w: f64,
    aom_attenuation_db: f64,
    splitter_temperature_c: f64,
    loss_chain: &'a [LossElement],
    total_loss_db: f64,
    sigma_db: f64,
    channels: Vec<ChannelRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_power_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_channels_at_target: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    balanced_power_at_target_w: Option<f64>,
}

/// Power budget: splitter leaf fractions through the shared loss ledger,
/// per-channel delivered power with uncertainty, and the max-min
/// balanced-power curve versus included channel count.
pub fn cmd_budget(sc: &Scenario, out_dir: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    let spl = sc.require_splitter()?;
    let losses = sc.require_losses()?;
    let tree = spl.load_tree(sc)?;
    let temp = spl.temperature_c.unwrap_or(tree.reference_temp);
    let leaves = forward_powers(&tree, temp)?;
    let template = ChannelBudget {
        input_power_w: losses.input_power_w,
        split_fraction: 1.0,
        loss_chain: losses.elements.clone(),
        aom_attenuation_db: losses.aom_attenuation_db,
    };

    let mut channels = Vec::with_capacity(leaves.len());
    for (i, &f) in leaves.powers.iter().enumerate() {
        let est = delivered_power(&ChannelBudget { split_fraction: f, ..template.clone() })?;
        channels.push(ChannelRow {
            channel: i + 1,
            split_fraction: f,
            delivered_w: est.power_w,
            sigma_db: est.sigma_db,
            lower_w: est.lower_w(),
            upper_w: est.upper_w(),
        });
    }
    let curve = balanced_power_curve(&leaves, &template)?;

    let (max_at_target, balanced_at_target) = match losses.target_power_w {
        Some(target) => {
            let k = max_channels_at_power(&curve, target);
            let balanced = if k == 0 { None } else { Some(curve[k - 1].balanced_power_w) };
            (Some(k), balanced)
        }
        None => (None, None),
    };

    let report = BudgetReport {
        scenario: &sc.name,
        input_power_w: losses.input_power_w,
        aom_attenuation_db: losses.aom_attenuation_db,
        splitter_temperature_c: temp,
        loss_chain: &losses.elements,
        total_loss_db: template.total_loss_db(),
        sigma_db: channels.first().map(|c| c.sigma_db).unwrap_or(0.0),
        channels,
        target_power_w: losses.target_power_w,
        max_channels_at_target: max_at_target,
        balanced_power_at_target_w: balanced_at_target,
    };

    let mut out = Outputs::new();
    out.add_json("budget.json", &report)?;
    out.add_table(
        "balanced_curve",
        format,
        "included_count,balanced_power_w,included_channels",
        &curve,
        |p| {
            let mut ids = String::new();
            for (i, id) in p.included_channels.iter().enumerate() {
                if i > 0 {
                    ids.push(' ');
                }
                let _ = write!(ids, "{id}");
            }
            format!("{},{},{}", p.included_count, p.balanced_power_w, ids)
        },
    )?;
    out.commit(out_dir)
}

// ------------------------------------------------------------- crosstalk

#[derive(Serialize)]
struct AddressingReport {
    feasible: bool,
    source_invariant_m_rad: f64,
    target_invariant_m_rad: f64,
}

#[derive(Serialize)]
struct NeighborRatio {
    offset_m: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct RabiReport {
    drive: GateDrive,
    rabi_rate_rad_per_s: f64,
    /// Fractional Rabi-rate error on the worst neighbor.
    rabi_error: f64,
    neighbor_rotation_rad: f64,
}

#[derive(Serialize)]
struct CrosstalkJson<'a> {
    scenario: &'a str,
    numerical_aperture: f64,
    wavelength_m: f64,
    ion_pitch_m: f64,
    pupil_fill: f64,
    image_waist_m: f64,
    aberrations: AberrationCoeffs,
    #[serde(skip_serializing_if = "Option::is_none")]
    addressing: Option<AddressingReport>,
    neighbors: Vec<NeighborRatio>,
    worst_crosstalk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rabi: Option<RabiReport>,
}

/// Etendue feasibility of mapping the object-side emitter array onto the
/// ion chain. Errors (exit 3) when the configured source cannot fit.
fn check_addressing(sc: &Scenario) -> Result<Option<AddressingReport>> {
    let (Some(src), Some(geom)) = (&sc.source, &sc.geometry) else {
        return Ok(None);
    };
    let Some(array_pitch) = src.array_pitch_m else {
        return Ok(None);
    };
    let pupil = sc.require_pupil()?;
    // Far-field divergence of the object-plane mode is the source NA.
    let object_beam = beam_from_mfd(pupil.wavelength_m, 2.0 * geom.object_waist)?;
    let check = lagrange_feasible(&LagrangeBudget {
        source_pitch: array_pitch,
        source_na: object_beam.divergence(),
        target_pitch: geom.ion_pitch,
        target_na: pupil.numerical_aperture,
    })?;
    if !check.feasible {
        return Err(Error::Physics(format!(
            "addressing budget infeasible: source invariant {:.3e} m*rad exceeds the \
             ion-plane invariant {:.3e} m*rad; expand the object-side waist",
            check.source_invariant, check.target_invariant
        )));
    }
    Ok(Some(AddressingReport {
        feasible: true,
        source_invariant_m_rad: check.source_invariant,
        target_invariant_m_rad: check.target_invariant,
    }))
}

/// Shared sweep evaluation for `crosstalk` and `tolerance`.
fn sweep_rows(sc: &Scenario, cli_seed: Option<u64>) -> Result<Vec<SweepRow>> {
    let sweep = sc.require_sweep()?;
    let src = sc.require_source()?;
    let geom = sc.require_geometry()?;
    let pupil = sc.require_pupil()?.spec();
    let sampling = sc.sampling();
    let grid = efl_grid(sweep.efl_start_m, sweep.efl_stop_m, sweep.efl_step_m)?;
    let perturbations = if sweep.is_stochastic() {
        let seed = sc.seed(cli_seed).ok_or_else(|| {
            Error::Config("stochastic sweep needs rng_seed in the scenario or --seed".into())
        })?;
        sample_mla_perturbations(
            &grid,
            sweep.efl_error_sigma_m,
            sweep.decenter_sigma_m,
            sweep.samples_per_efl,
            seed,
        )?
    } else {
        grid.iter().map(|&f| MlaPerturbation::nominal(f)).collect()
    };
    mla_tolerance_sweep(geom, &pupil, src.fiber_mfd_m, &sampling, &perturbations)
}

const SWEEP_HEADER: &str =
    "efl_m,efl_error_m,decenter_m,pupil_fill,defocus_waves,crosstalk_left,crosstalk_right,crosstalk";

fn sweep_csv_row(r: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.perturbation.efl,
        r.perturbation.efl_error,
        r.perturbation.decenter,
        r.pupil_fill,
        r.defocus_waves,
        r.crosstalk_left,
        r.crosstalk_right,
        r.crosstalk
    )
}

/// Diffraction pipeline: addressing feasibility, the on-axis PSF, nearest
/// neighbor crosstalk (optionally converted to Rabi error), and, when a
/// [sweep] section is present, the microlens tolerance table.
pub fn cmd_crosstalk(
    sc: &Scenario,
    out_dir: &Path,
    cli_seed: Option<u64>,
    format: TableFormat,
) -> Result<Vec<PathBuf>> {
    let geom = sc.require_geometry()?;
    let pupil_sec = sc.require_pupil()?;
    let pupil = pupil_sec.spec();
    let sampling = sc.sampling();
    let fill = sc.pupil_fill()?;
    let neighbor_count = sc.crosstalk.map(|c| c.neighbor_count).unwrap_or(1);
    if neighbor_count == 0 {
        return Err(Error::Config("neighbor_count must be >= 1".into()));
    }

    let addressing = check_addressing(sc)?;
    let psf = psf_1d(&pupil, fill, &sampling)?;

    let mut offsets = Vec::with_capacity(2 * neighbor_count);
    for k in (1..=neighbor_count).rev() {
        offsets.push(-(k as f64) * geom.ion_pitch);
    }
    for k in 1..=neighbor_count {
        offsets.push(k as f64 * geom.ion_pitch);
    }
    let ratios = crate::diffraction::crosstalk_at(&psf, &offsets)?;
    let worst = ratios.iter().cloned().fold(0.0f64, f64::max);
    let neighbors = offsets
        .iter()
        .zip(&ratios)
        .map(|(&offset_m, &ratio)| NeighborRatio { offset_m, ratio })
        .collect();

    let rabi = match &sc.rabi {
        Some(r) => {
            let model =
                RabiModel::calibrated(r.individual_power_w, r.global_power_w, r.rabi_rate_rad_per_s)?;
            let rate = model.rabi_rate(r.individual_power_w, r.global_power_w)?;
            let err = crosstalk_rabi_error(worst, r.drive)?;
            Some(RabiReport {
                drive: r.drive,
                rabi_rate_rad_per_s: rate,
                rabi_error: err,
                neighbor_rotation_rad: neighbor_rotation(r.pi_pulse, err),
            })
        }
        None => None,
    };

    let report = CrosstalkJson {
        scenario: &sc.name,
        numerical_aperture: pupil.numerical_aperture,
        wavelength_m: pupil.wavelength,
        ion_pitch_m: geom.ion_pitch,
        pupil_fill: fill,
        image_waist_m: geom.image_waist(),
        aberrations: pupil.aberrations,
        addressing,
        neighbors,
        worst_crosstalk: worst,
        rabi,
    };

    let mut out = Outputs::new();
    out.add_json("crosstalk.json", &report)?;
    add_profile_table(&mut out, "psf", format, &psf)?;
    if sc.sweep.is_some() {
        let rows = sweep_rows(sc, cli_seed)?;
        out.add_table("tolerance_table", format, SWEEP_HEADER, &rows, sweep_csv_row)?;
    }
    out.commit(out_dir)
}

// ------------------------------------------------------------- tolerance

#[derive(Serialize)]
struct BestEfl<'a> {
    scenario: &'a str,
    rows_evaluated: usize,
    #[serde(flatten)]
    best: SweepRow,
}

/// Microlens tolerance sweep on its own: the full table plus the
/// lowest-crosstalk row.
pub fn cmd_tolerance(
    sc: &Scenario,
    out_dir: &Path,
    cli_seed: Option<u64>,
    format: TableFormat,
) -> Result<Vec<PathBuf>> {
    let rows = sweep_rows(sc, cli_seed)?;
    let best = *select_best_efl(&rows)?;
    let mut out = Outputs::new();
    out.add_table("tolerance_table", format, SWEEP_HEADER, &rows, sweep_csv_row)?;
    out.add_json(
        "best_efl.json",
        &BestEfl { scenario: &sc.name, rows_evaluated: rows.len(), best },
    )?;
    out.commit(out_dir)
}

// ------------------------------------------------------------- pathmatch

#[derive(Serialize)]
struct ChannelSolution {
    channel_id: usize,
    #[serde(flatten)]
    solution: StageSolution,
}

#[derive(Serialize)]
struct StagePositions<'a> {
    scenario: &'a str,
    channels: Vec<ChannelSolution>,
}

/// Pulse-arrival matching: per-channel optimal stage positions, the
/// splice plan for channels the stage cannot fix, and the fringe pattern
/// of the worst post-optimization channel.
pub fn cmd_pathmatch(sc: &Scenario, out_dir: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    let pulse = sc.require_pulse()?.spec();
    let stages = sc.require_stages()?;
    let path_sec = sc.require_paths()?;
    if path_sec.static_offsets_m.is_empty() {
        return Err(Error::Config("[paths] static_offsets_m is empty".into()));
    }

    let paths: Vec<ChannelPath> = path_sec
        .static_offsets_m
        .iter()
        .enumerate()
        .map(|(i, &off)| ChannelPath {
            channel_id: i + 1,
            static_length_offset: off,
            stage: stages.stage(),
            splice_adjustment: 0.0,
        })
        .collect();

    let mut channels = Vec::with_capacity(paths.len());
    for p in &paths {
        channels.push(ChannelSolution { channel_id: p.channel_id, solution: optimize_stage(p, &pulse)? });
    }
    let plan = splice_plan(&paths, &pulse, stages.visibility_floor)?;

    // Fringe diagnostic at the worst channel's residual; ties go to the
    // lowest channel id.
    let worst = channels
        .iter()
        .min_by(|a, b| {
            a.solution
                .visibility
                .partial_cmp(&b.solution.visibility)
                .expect("visibilities are finite")
                .then(a.channel_id.cmp(&b.channel_id))
        })
        .expect("at least one channel");
    let fringes = fringe_pattern(&pulse, worst.solution.residual, path_sec.fringe_half_angle_rad)?;

    let mut out = Outputs::new();
    out.add_json("stage_positions.json", &StagePositions { scenario: &sc.name, channels })?;
    out.add_json("splice_plan.json", &plan)?;
    add_profile_table(&mut out, "fringes", format, &fringes)?;
    out.commit(out_dir)
}

// ---------------------------------------------------------- fit-splitter

/// Fits a coupler tree to measured per-channel powers and writes the
/// tree JSON (loadable back through [splitter] tree_file).
pub fn cmd_fit_splitter(measured: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let powers = read_measured_csv_file(measured)?;
    let n = powers.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::Config(format!(
            "measured splitter CSV must hold a power of two channels, got {n}"
        )));
    }
    let tree = fit_tree(&powers, n.trailing_zeros() as usize)?;
    let mut out = Outputs::new();
    let mut text = tree.to_json();
    text.push('\n');
    out.add("fitted_tree.json", text);
    out.commit(out_dir)
}

// ------------------------------------------------------- profile-analyze

#[derive(Serialize)]
struct AnalysisJson<'a> {
    scenario: &'a str,
    stack_sidecar: String,
    frames: usize,
    ion_pitch_m: f64,
    noise: NoiseModel,
    dark_region: [usize; 2],
    #[serde(flatten)]
    report: CrosstalkReport,
}

/// Measured-stack pipeline: load the exposure stack, HDR-stitch it, and
/// extract neighbor crosstalk with the configured noise floor.
pub fn cmd_profile_analyze(
    sc: &Scenario,
    stack_override: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let an = sc.require_analysis()?;
    an.noise.validate()?;
    let sidecar: PathBuf = match (stack_override, &an.stack_sidecar) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(rel)) => sc.resolve(rel),
        (None, None) => {
            return Err(Error::Config(
                "no exposure stack: set [analysis] stack_sidecar or pass --stack".into(),
            ))
        }
    };
    let pitch = match an.ion_pitch_m.or_else(|| sc.geometry.as_ref().map(|g| g.ion_pitch)) {
        Some(p) => p,
        None => {
            return Err(Error::Config(
                "no site pitch: set [analysis] ion_pitch_m or a [geometry] section".into(),
            ))
        }
    };

    let stack = load_stack(&sidecar)?;
    let stitched = hdr_stitch(&stack)?;
    let report = extract_crosstalk(
        &stitched,
        pitch,
        an.neighbor_count,
        &an.noise,
        an.dark_region[0]..an.dark_region[1],
    )?;

    let full = AnalysisJson {
        scenario: &sc.name,
        stack_sidecar: sidecar.display().to_string(),
        frames: stack.frames().len(),
        ion_pitch_m: pitch,
        noise: an.noise,
        dark_region: an.dark_region,
        report,
    };
    let mut out = Outputs::new();
    out.add_json("crosstalk_report.json", &full)?;
    out.commit(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use std::fs;

    fn demo_toml() -> String {
        r#"
name = "cmd-test"
rng_seed = 11

[geometry]
channel_count = 16
ion_pitch_m = 4.0e-6
demagnification = 62.5
object_waist_m = 56.25e-6

[pupil]
numerical_aperture = 0.37
wavelength_m = 532.0e-9

[grid]
pupil_samples = 128
padding = 8

[source]
fiber_mfd_m = 3.3e-6
array_pitch_m = 250.0e-6

[splitter]
depth = 4

[losses]
input_power_w = 0.125
elements = [
    { name = "aom", insertion_loss_db = 3.0, uncertainty_db = 0.3 },
    { name = "fiber_array", insertion_loss_db = 1.4, uncertainty_db = 0.3 },
    { name = "relay", insertion_loss_db = 1.1, uncertainty_db = 0.3 },
]
target_power_w = 2.0e-3

[rabi]
individual_power_w = 2.0e-3
global_power_w = 2.0e-3
rabi_rate_rad_per_s = 6.283185307179586e6
drive = "global_beam"

[pulse]
duration_fwhm_s = 10.0e-12
wavelength_m = 532.0e-9

[stages]
travel_m = 4.0e-3
resolution_m = 210.0e-6
visibility_floor = 0.999

[paths]
static_offsets_m = [0.0, -1.0e-3, -5.0e-3]
"#
        .to_string()
    }

    fn scenario_from(text: &str, dir: &Path) -> Scenario {
        Scenario::from_toml(text, dir).unwrap()
    }

    #[test]
    fn budget_writes_curve_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario_from(&demo_toml(), dir.path());
        let out = dir.path().join("out");
        let files = cmd_budget(&sc, &out, TableFormat::Csv).unwrap();
        assert_eq!(files.len(), 2);

        let budget: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("budget.json")).unwrap()).unwrap();
        assert_eq!(budget["channels"].as_array().unwrap().len(), 16);
        // balanced tree, 5.5 dB chain: every channel sees the same power
        let d0 = budget["channels"][0]["delivered_w"].as_f64().unwrap();
        let expected = 0.125 / 16.0 * 10f64.powf(-0.55);
        assert!((d0 - expected).abs() < 1e-12, "{d0} vs {expected}");
        assert_eq!(budget["max_channels_at_target"].as_u64().unwrap(), 16);

        let curve = fs::read_to_string(out.join("balanced_curve.csv")).unwrap();
        let lines: Vec<&str> = curve.lines().collect();
        assert_eq!(lines.len(), 17);
        assert!(lines[0].starts_with("included_count,"));
    }

    #[test]
    fn crosstalk_reports_feasible_demo() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario_from(&demo_toml(), dir.path());
        let out = dir.path().join("out");
        cmd_crosstalk(&sc, &out, None, TableFormat::Csv).unwrap();

        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("crosstalk.json")).unwrap()).unwrap();
        assert!(report["addressing"]["feasible"].as_bool().unwrap());
        let worst = report["worst_crosstalk"].as_f64().unwrap();
        assert!(worst < 1e-4, "unaberrated crosstalk should be tiny, got {worst}");
        assert!(report["rabi"]["rabi_error"].as_f64().unwrap() > 0.0);
        assert!(out.join("psf.csv").is_file());
        // no [sweep] section: no tolerance table
        assert!(!out.join("tolerance_table.csv").exists());
    }

    #[test]
    fn crosstalk_rejects_infeasible_source() {
        let dir = tempfile::tempdir().unwrap();
        // bare 1.65 um object waist: source NA far exceeds what the ion
        // plane can accept at 4 um pitch
        let text = demo_toml().replace("object_waist_m = 56.25e-6", "object_waist_m = 1.65e-6");
        let sc = scenario_from(&text, dir.path());
        let out = dir.path().join("out");
        let err = cmd_crosstalk(&sc, &out, None, TableFormat::Csv).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("infeasible"), "{err}");
        assert!(!out.exists(), "failed command must not leave outputs");
    }

    #[test]
    fn tolerance_table_and_best_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = demo_toml();
        text.push_str(
            "\n[sweep]\nefl_start_m = 0.6e-3\nefl_stop_m = 0.9e-3\nefl_step_m = 0.1e-3\n",
        );
        let sc = scenario_from(&text, dir.path());
        let out = dir.path().join("out");
        cmd_tolerance(&sc, &out, None, TableFormat::Csv).unwrap();

        let table = fs::read_to_string(out.join("tolerance_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 5, "header + 4 grid rows");
        let best: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("best_efl.json")).unwrap()).unwrap();
        assert_eq!(best["rows_evaluated"].as_u64().unwrap(), 4);
        let efl = best["efl_m"].as_f64().unwrap();
        assert!(efl >= 0.6e-3 && efl <= 0.9e-3);
    }

    #[test]
    fn stochastic_sweep_needs_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = demo_toml().replace("rng_seed = 11\n", "");
        text.push_str(
            "\n[sweep]\nefl_start_m = 0.7e-3\nefl_stop_m = 0.8e-3\nefl_step_m = 0.1e-3\nefl_error_sigma_m = 2.0e-6\nsamples_per_efl = 2\n",
        );
        let sc = scenario_from(&text, dir.path());
        let out = dir.path().join("out");
        let err = cmd_tolerance(&sc, &out, None, TableFormat::Csv).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("seed"), "{err}");
        // same scenario works once the CLI supplies the seed
        cmd_tolerance(&sc, &out, Some(5), TableFormat::Csv).unwrap();
        let table = fs::read_to_string(out.join("tolerance_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 5, "header + 2 EFLs x 2 draws");
    }

    #[test]
    fn identical_seeds_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = demo_toml();
        text.push_str(
            "\n[sweep]\nefl_start_m = 0.7e-3\nefl_stop_m = 0.8e-3\nefl_step_m = 0.1e-3\nefl_error_sigma_m = 2.0e-6\ndecenter_sigma_m = 0.5e-6\nsamples_per_efl = 2\n",
        );
        let sc = scenario_from(&text, dir.path());
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_crosstalk(&sc, &out_a, Some(17), TableFormat::Csv).unwrap();
        cmd_crosstalk(&sc, &out_b, Some(17), TableFormat::Csv).unwrap();
        for name in ["crosstalk.json", "psf.csv", "tolerance_table.csv"] {
            let a = fs::read(out_a.join(name)).unwrap();
            let b = fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        // a different seed moves the sampled rows
        let out_c = dir.path().join("c");
        cmd_crosstalk(&sc, &out_c, Some(18), TableFormat::Csv).unwrap();
        assert_ne!(
            fs::read(out_a.join("tolerance_table.csv")).unwrap(),
            fs::read(out_c.join("tolerance_table.csv")).unwrap()
        );
    }

    #[test]
    fn pathmatch_plans_splice_for_long_channel() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario_from(&demo_toml(), dir.path());
        let out = dir.path().join("out");
        cmd_pathmatch(&sc, &out, TableFormat::Csv).unwrap();

        let positions: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("stage_positions.json")).unwrap())
                .unwrap();
        let channels = positions["channels"].as_array().unwrap();
        assert_eq!(channels.len(), 3);
        assert!(channels[0]["in_range"].as_bool().unwrap());
        assert!(channels[1]["in_range"].as_bool().unwrap());
        assert!(!channels[2]["in_range"].as_bool().unwrap(), "-5 mm exceeds travel");

        let plan: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("splice_plan.json")).unwrap())
                .unwrap();
        let entries = plan["entries"].as_array().unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0]["channel_id"].as_u64().unwrap(), 3);
        assert!(entries[0]["visibility"].as_f64().unwrap() >= 0.999);
        assert!(out.join("fringes.csv").is_file());
    }

    #[test]
    fn pathmatch_infeasible_floor_is_physics_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = demo_toml().replace("visibility_floor = 0.999", "visibility_floor = 0.99999");
        let sc = scenario_from(&text, dir.path());
        let out = dir.path().join("out");
        let err = cmd_pathmatch(&sc, &out, TableFormat::Csv).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("floor"), "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn fit_splitter_round_trips_through_budget_tree_file() {
        let dir = tempfile::tempdir().unwrap();
        let measured = dir.path().join("measured.csv");
        let mut csv = String::from("channel,power\n");
        for i in 0..8 {
            let p = 0.1 + 0.01 * i as f64;
            csv.push_str(&format!("{},{}\n", i + 1, p));
        }
        fs::write(&measured, csv).unwrap();
        let out = dir.path().join("out");
        cmd_fit_splitter(&measured, &out).unwrap();

        let tree =
            crate::splitter::SplitterTree::from_json(&fs::read_to_string(out.join("fitted_tree.json")).unwrap())
                .unwrap();
        assert_eq!(tree.leaf_count(), 8);
        let leaves = forward_powers(&tree, tree.reference_temp).unwrap();
        let total: f64 = (0..8).map(|i| 0.1 + 0.01 * i as f64).sum();
        for (i, &p) in leaves.powers.iter().enumerate() {
            let expected = (0.1 + 0.01 * i as f64) / total;
            assert!((p - expected).abs() < 1e-12, "leaf {i}: {p} vs {expected}");
        }
    }

    #[test]
    fn fit_splitter_rejects_non_power_of_two() {
        let dir = tempfile::tempdir().unwrap();
        let measured = dir.path().join("measured.csv");
        fs::write(&measured, "channel,power\n1,0.5\n2,0.3\n3,0.2\n").unwrap();
        let err = cmd_fit_splitter(&measured, &dir.path().join("out")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn profile_analyze_single_csv_frame() {
        let dir = tempfile::tempdir().unwrap();
        // narrow Gaussian on a 0.2 um grid, power in the center
        let n = 301;
        let pitch = 0.2e-6;
        let mut csv = String::from("position_m,counts\n");
        for i in 0..n {
            let x = (i as f64 - 150.0) * pitch;
            let v = 3000.0 * (-2.0 * (x / 0.9e-6) * (x / 0.9e-6)).exp();
            csv.push_str(&format!("{x},{v}\n"));
        }
        let frame = dir.path().join("frame.csv");
        fs::write(&frame, csv).unwrap();
        let sidecar = dir.path().join("stack.json");
        fs::write(
            &sidecar,
            format!(
                "{{\"frames\":[{{\"file\":\"frame.csv\",\"exposure\":1.0,\"saturation_level\":4096.0}}]}}"
            ),
        )
        .unwrap();

        let mut text = demo_toml();
        text.push_str(&format!(
            "\n[analysis]\nstack_sidecar = \"stack.json\"\ndark_region = [0, 40]\n\n[analysis.noise]\ndark_noise = 0.5\n"
        ));
        let sc = scenario_from(&text, dir.path());
        let out = dir.path().join("out");
        cmd_profile_analyze(&sc, None, &out).unwrap();

        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("crosstalk_report.json")).unwrap())
                .unwrap();
        assert_eq!(report["frames"].as_u64().unwrap(), 1);
        assert!(report["peak_value"].as_f64().unwrap() > 2900.0);
        assert_eq!(report["ratios"].as_array().unwrap().len(), 2);
        // clean Gaussian: neighbors sit below the configured floor
        assert!(report["ratios"][0]["below_noise_floor"].as_bool().unwrap());
    }

    #[test]
    fn json_table_format_switches_extension() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario_from(&demo_toml(), dir.path());
        let out = dir.path().join("out");
        cmd_budget(&sc, &out, TableFormat::Json).unwrap();
        assert!(out.join("balanced_curve.json").is_file());
        assert!(!out.join("balanced_curve.csv").exists());
        let rows: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("balanced_curve.json")).unwrap())
                .unwrap();
        assert_eq!(rows.as_array().unwrap().len(), 16);
    }
}
