use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("interval lengths differ: {0} vs {1}")]
    BetaMismatch(f64, f64),
    #[error("time {t} outside [0, {beta}]")]
    TimeOutOfRange { t: f64, beta: f64 },
    #[error("endpoint condition has zero probability")]
    ZeroProbability,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("vertex {0} is frozen")]
    FrozenVertex(usize),
    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),
    #[error("iteration did not converge after {0} steps")]
    NoConvergence(usize),
    #[error("series too short: {0}")]
    SeriesTooShort(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
