use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid distribution ({context}): sum={sum}")]
    InvalidDistribution { context: String, sum: f64 },

    #[error("positivity violation: {0}")]
    PositivityViolation(String),

    #[error("unreachable history {0:?}")]
    UnreachableHistory(Vec<usize>),

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
