use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("regularizer is not polyhedral: {0}")]
    NotPolyhedral(&'static str),

    /// The diagonally dominant fast path saw a nonzero off-support entry of
    /// `K p`; the generic event search must be used instead.
    #[error(
        "off-support entry {index} of K p is {value:.3e}; rerun with the generic event search"
    )]
    FastPathViolated { index: usize, value: f64 },

    #[error("unsupported trajectory: {0}")]
    UnsupportedTrajectory(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
