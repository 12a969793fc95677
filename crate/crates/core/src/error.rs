use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no events")]
    NoEvents,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("fit diverged after {iterations} iterations")]
    FitDiverged { iterations: usize },

    #[error("monotone likelihood: coefficient magnitude {max_abs:.3} exceeds {limit}")]
    MonotoneLikelihood { max_abs: f64, limit: f64 },

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("censoring rate {target:.3} unreachable, achieved {achieved:.3}")]
    CensorRateUnreachable { target: f64, achieved: f64 },

    #[error("degenerate reputation mass")]
    DegenerateReputationMass,

    #[error("aggregation weights are all zero")]
    ZeroWeights,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
