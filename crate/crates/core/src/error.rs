use thiserror::Error;

/// Errors produced by the bounds, policy and learning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no observations")]
    NoObservations,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("covariate {0} has zero sample variance")]
    ZeroVariance(usize),
    #[error("x0 outside effective support")]
    OutsideSupport,
    #[error("no grid point in range for tau = {0}; grid too coarse")]
    GridTooCoarse(f64),
    #[error("assumption {0} not supported")]
    Unsupported(String),
    #[error("linear program malformed: {0}")]
    MalformedProgram(String),
    #[error("linear program failed: {0}")]
    LpFailure(String),
    #[error("conditioning event not uniformly positive")]
    EventNotPositive,
    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),
    #[error("nothing to learn: all weights are zero")]
    NothingToLearn,
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;
