use thiserror::Error;

pub type Result<T, E = CklError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CklError {
    #[error("empty instance")]
    EmptyInstance,

    #[error("invalid score: {0}")]
    InvalidScore(f64),

    #[error("misaligned inputs: expected {expected} entries, got {got}")]
    Misaligned { expected: usize, got: usize },

    #[error("exponent below one: gamma - beta = {exponent} for negative {index}")]
    ExponentBelowOne { index: usize, exponent: f64 },

    #[error("ratio undefined: teacher probability is zero")]
    RatioUndefined,

    #[error("margin-mse needs at least one (positive, negative) pair")]
    NoPairs,

    #[error("invalid instance {query_id}: {reason}")]
    InvalidInstance { query_id: String, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("malformed instance on line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
