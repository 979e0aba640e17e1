use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes
/// (see `cli::exit_code`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("index out of range: {0}")]
    InvalidIndex(String),

    #[error("state dimensions do not match configuration: {0}")]
    InvalidState(String),

    #[error("norm drift beyond budget at t = {t}: |norm - 1| = {drift:e} (budget {budget:e})")]
    NormViolation { t: f64, drift: f64, budget: f64 },

    #[error("dense reference space too large: dimension {dim} exceeds cap {cap}")]
    OracleTooLarge { dim: usize, cap: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no peak above threshold {threshold} found for level {level}")]
    NoPeak { level: usize, threshold: f64 },

    #[error("scaling study failed: no peak for N in {failed:?}")]
    ScalingFailure { failed: Vec<usize> },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
