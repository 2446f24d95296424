use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient at coordinate {coordinate} ({value})")]
    NonFiniteGradient { coordinate: usize, value: f64 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("infeasible task: {0}")]
    Infeasible(String),

    #[error("record {id}: unmappable fields {keys:?}")]
    UnmappableFields { id: String, keys: Vec<String> },

    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("undefined statistic: {0}")]
    Undefined(&'static str),

    #[error(transparent)]
    Judge(#[from] crate::eval::JudgeError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable class prefix used on standard error by the command line tool.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::Infeasible(_) => "input",
            Error::Shape(_) => "shape",
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => "numeric",
            Error::UnmappableFields { .. } | Error::BadRecord { .. } => "record",
            Error::Checkpoint(_) => "checkpoint",
            Error::Undefined(_) => "statistic",
            Error::Judge(_) => "judge",
            Error::Io { .. } => "io",
            Error::Json { .. } => "format",
        }
    }
}
