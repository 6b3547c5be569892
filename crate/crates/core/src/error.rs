use thiserror::Error;

use crate::estimators::RunTrace;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violated: {0}")]
    Contract(String),

    /// No previous-level sample survived seed screening. The driver attaches
    /// the partial trace once it gives up on the run.
    #[error("level {level} collapsed: no seeds survived screening")]
    LevelCollapse { level: usize, trace: Option<Box<RunTrace>> },

    /// The ladder reached its maximum number of levels before terminating.
    #[error("level budget of {max_levels} exhausted before termination")]
    BudgetExhausted { max_levels: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("estimator error at level {level}, sample {index}: log-likelihood is {value}")]
    Estimator {
        level: usize,
        index: usize,
        value: f64,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("record {line}: {message}")]
    Record { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
