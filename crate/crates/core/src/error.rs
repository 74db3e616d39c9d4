use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("square root of negative argument {value}")]
    NegativeSqrtArgument { value: f64 },

    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("step count {0} is odd, cannot pair increments")]
    OddStepCount(usize),

    #[error("level {level} is not valid here: {reason}")]
    InvalidLevel { level: u32, reason: &'static str },

    #[error("zero mean at level {level}, cannot take log2")]
    ZeroMean { level: u32 },

    #[error("regression needs at least 2 usable points, got {0}")]
    IllConditioned(usize),

    #[error("weak error constant is zero")]
    ZeroWeakConstant,

    #[error("GS-NV plan needs the variance of the last level sample")]
    MissingLastLevelVariance,

    #[error("variance must be positive, got {0}")]
    NonpositiveVariance(f64),

    #[error("{aborted} of {samples} samples aborted at level {level}")]
    AbortFractionExceeded { level: u32, aborted: u64, samples: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors that abort a single Monte Carlo sample rather than the whole run.
    pub fn is_sample_abort(&self) -> bool {
        matches!(self, Error::NegativeSqrtArgument { .. })
    }
}
