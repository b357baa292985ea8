use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration and input-validation problems exit 2, physics-domain
/// failures exit 3, filesystem problems exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- configuration / input validation (exit 2) --
    #[error("config error: {0}")]
    Config(String),
    #[error("config error in {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("invalid input data: {0}")]
    InvalidInput(String),

    // -- physics domain (exit 3) --
    #[error("invalid beam: {0}")]
    InvalidBeam(String),
    #[error("invalid element: {0}")]
    InvalidElement(String),
    #[error("singular propagation: C*q + D vanished")]
    SingularPropagation,
    #[error("invalid pupil: {0}")]
    InvalidPupil(String),
    #[error("undersampled grid: {0}")]
    UndersampledGrid(String),
    #[error("offset {offset_m} m outside profile support")]
    OffsetOutsideSupport { offset_m: f64 },
    #[error("active channel set is empty")]
    EmptyActiveSet,
    #[error("splitter fit error: {0}")]
    SplitterFit(String),
    #[error("peak lies at the profile edge; cannot interpolate")]
    PeakAtEdge,
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("no periodicity detected in profile")]
    NoPeriodicity,
    #[error(
        "{count} pixel(s) saturated at every exposure (first indices {first:?})"
    )]
    SaturatedEverywhere { count: usize, first: Vec<usize> },
    #[error(
        "visibility floor {floor} unreachable: quantization bounds visibility at {bound}"
    )]
    InfeasibleFloor { floor: f64, bound: f64 },
    #[error("physics error: {0}")]
    Physics(String),

    // -- I/O (exit 4) --
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Exit code contract: 0 success, 2 config error, 3 physics-domain
    /// error, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigFile { .. } | Error::InvalidInput(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
