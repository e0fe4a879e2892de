use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} contains no facts")]
    EmptyInput(PathBuf),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("requested {requested} distinct facts but the pools only admit {capacity}")]
    CapacityExceeded { requested: u128, capacity: u128 },

    #[error("statement of length {length} is shorter than model order {order}")]
    StatementTooShort { length: usize, order: usize },

    #[error("statement has {actual} tokens, model emits {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("probability row for context {context} has zero total")]
    ZeroRow { context: String },

    #[error("model has no initial distribution")]
    UntrainedModel,

    #[error("stored probabilities disagree with counts at {context}: stored {stored}, recomputed {recomputed}")]
    ProbabilityMismatch {
        context: String,
        stored: f64,
        recomputed: f64,
    },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("no completion expected for prompt {0:?}")]
    UnknownPrompt(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
