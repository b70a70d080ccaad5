use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value outside the mathematical domain of an operation, e.g. `T <= 0`
    /// for a softmax that must be routed through the greedy limit instead.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate logit row at step {step}: all entries are zero")]
    DegenerateRow { step: usize },

    #[error("insufficient runs: need at least 2, got {0}")]
    InsufficientRuns(usize),

    #[error("empty generation: aligned length is zero")]
    EmptyGeneration,

    #[error("sequence complete: prefix length {len} reached the {cap}-token cap")]
    SequenceComplete { len: usize, cap: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt record {path}: expected {expected} bytes, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("undefined correlation between {a} and {b}: zero variance")]
    UndefinedCorrelation { a: String, b: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
