use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("coordinate {value} on dimension {dim} is outside [{lower}, {upper}]")]
    OutOfDomain {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("time {time} is outside the stored range [{start}, {end}]")]
    OutOfTimeRange { time: f64, start: f64, end: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input {name} = {value} exceeds its bound {bound}")]
    InputBound { name: &'static str, value: f64, bound: f64 },

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("time step underflow at t = {0}")]
    StepUnderflow(f64),

    #[error("Cholesky factorization failed after jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("all {0} optimizer restarts failed")]
    FitFailed(usize),

    #[error("resample budget exhausted after {attempts} attempts for sample {index}")]
    ResampleBudget { index: usize, attempts: usize },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn archive(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Archive {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or parameters.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_)
                | Self::InvalidParameter(_)
                | Self::InvalidGrid(_)
                | Self::DimensionMismatch(_)
        )
    }
}
