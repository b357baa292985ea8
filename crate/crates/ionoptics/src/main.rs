use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ionoptics::commands::{self, TableFormat};
use ionoptics::scenario::Scenario;
use ionoptics::{Error, Result};

/// Scenario-driven design and analysis runs for a multi-channel optical
/// addressing system. Outputs land in --out as plain CSV/JSON and are
/// byte-identical for identical scenario + seed.
#[derive(Parser)]
#[command(name = "ionoptics", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> TableFormat {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Seed for stochastic steps; overrides the scenario's rng_seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Encoding for tabular outputs (reports are always JSON).
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Per-channel power budget and the balanced-power curve.
    Budget {
        #[command(flatten)]
        common: Common,
    },
    /// Addressing PSF, neighbor crosstalk, optional tolerance table.
    Crosstalk {
        #[command(flatten)]
        common: Common,
    },
    /// Delay-stage optimization, splice plan, fringe diagnostic.
    Pathmatch {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a splitter coupler tree to measured channel powers.
    FitSplitter {
        /// Measured per-channel power CSV (channel,power).
        #[arg(long, value_name = "FILE")]
        measured: Option<PathBuf>,
        /// Scenario whose [splitter] measured_csv names the input
        /// (ignored when --measured is given).
        #[arg(long, value_name = "FILE")]
        scenario: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// HDR-stitch a measured exposure stack and extract crosstalk.
    ProfileAnalyze {
        #[command(flatten)]
        common: Common,
        /// Stack sidecar JSON; overrides [analysis] stack_sidecar.
        #[arg(long, value_name = "FILE")]
        stack: Option<PathBuf>,
    },
    /// Microlens focal-length tolerance sweep and best choice.
    Tolerance {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Budget { common } => {
            let sc = Scenario::load(&common.scenario)?;
            commands::cmd_budget(&sc, &common.out, common.format.into())
        }
        Command::Crosstalk { common } => {
            let sc = Scenario::load(&common.scenario)?;
            commands::cmd_crosstalk(&sc, &common.out, common.seed, common.format.into())
        }
        Command::Pathmatch { common } => {
            let sc = Scenario::load(&common.scenario)?;
            commands::cmd_pathmatch(&sc, &common.out, common.format.into())
        }
        Command::FitSplitter { measured, scenario, out } => {
            let path = match (measured, scenario) {
                (Some(m), _) => m,
                (None, Some(s)) => {
                    let sc = Scenario::load(&s)?;
                    let spl = sc.require_splitter()?;
                    let rel = spl.measured_csv.clone().ok_or_else(|| {
                        Error::Config(
                            "scenario [splitter] has no measured_csv; pass --measured".into(),
                        )
                    })?;
                    sc.resolve(&rel)
                }
                (None, None) => {
                    return Err(Error::Config(
                        "fit-splitter needs --measured or --scenario".into(),
                    ))
                }
            };
            commands::cmd_fit_splitter(&path, &out)
        }
        Command::ProfileAnalyze { common, stack } => {
            let sc = Scenario::load(&common.scenario)?;
            commands::cmd_profile_analyze(&sc, stack.as_deref(), &common.out)
        }
        Command::Tolerance { common } => {
            let sc = Scenario::load(&common.scenario)?;
            commands::cmd_tolerance(&sc, &common.out, common.seed, common.format.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
