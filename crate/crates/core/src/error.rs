use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coupled LQ stage system is singular at step {step}")]
    SingularStage { step: usize },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("horizon mismatch: expected {expected} steps, got {got}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("all particle weights are zero (estimator collapse)")]
    EstimatorCollapse,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no sample converged")]
    NoConvergedSamples,

    #[error("config error: {0}")]
    Config(String),

    #[error("archive error in {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::SingularStage { .. } => "singular_stage",
            Error::Divergence { .. } => "divergence",
            Error::HorizonMismatch { .. } => "horizon_mismatch",
            Error::EstimatorCollapse => "estimator_collapse",
            Error::EmptyInput(_) => "empty_input",
            Error::NoConvergedSamples => "no_converged_samples",
            Error::Config(_) => "config",
            Error::Archive { .. } => "archive",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
