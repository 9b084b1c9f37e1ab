use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not a probability vector: {detail}")]
    NotStochastic { what: String, detail: String },

    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(
        "behavior policy assigns zero probability to observed action {action} in state {state}"
    )]
    ZeroBehaviorProbability { state: usize, action: usize },

    #[error("all importance weights are zero")]
    ZeroWeights,

    #[error("states with zero behavior visitation probability: {0:?}")]
    UnvisitedStates(Vec<usize>),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, OpeError>;

impl From<serde_json::Error> for OpeError {
    fn from(e: serde_json::Error) -> Self {
        OpeError::Serialization(e.to_string())
    }
}
