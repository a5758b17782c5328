use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("duplicate agent id {0} in snapshot")]
    DuplicateAgent(u32),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AvoidanceError {
    #[error("point coincides with the obstacle reference point")]
    SingularPoint,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("too few samples for {what}: need {need}, got {got}")]
    TooFewSamples { what: &'static str, need: usize, got: usize },
    #[error("no samples above the command magnitude threshold")]
    NoRetainedSamples,
    #[error("start and goal coincide; path ratio undefined")]
    ZeroLengthGoal,
    #[error("need at least {need} trials to form clusters, got {got}")]
    TooFewTrials { need: usize, got: usize },
    #[error("every group needs at least 2 values")]
    GroupTooSmall,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("truncated log: {0} (at byte {1})")]
    Truncated(&'static str, usize),
}

/// Top-level error for trial orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
