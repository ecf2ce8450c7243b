use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain length {n}: need at least {min} sites")]
    InvalidSize { n: usize, min: usize },

    #[error("invalid coupling profile: {0}")]
    InvalidProfile(String),

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("norm drift {drift:.3e} at t = {t} exceeds {limit:.1e} (step too large?)")]
    NormDrift { t: f64, drift: f64, limit: f64 },

    #[error("calibration failed: best fidelity {best:.4} below {threshold}")]
    Calibration {
        best: f64,
        threshold: f64,
        sweep: Vec<(f64, f64)>,
    },

    #[error("run {id}: {source}")]
    Run {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numeric abort, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Run { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::Csv { .. } => 4,
            Error::Numeric(_)
            | Error::Contract(_)
            | Error::NormDrift { .. }
            | Error::Calibration { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
