use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("environment: {0}")]
    Environment(String),

    #[error("failed to build an environment after {retries} context resamples: {last}")]
    ContextRetriesExhausted { retries: usize, last: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("records line {line}: {message}")]
    Records { line: u64, message: String },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
