use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("unknown category id {id} (taxonomy has {count} categories)")]
    UnknownCategory { id: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite value in forward pass ({0})")]
    NonFiniteLoss(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model state has not been trained")]
    UntrainedModel,

    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checksum mismatch for blob `{0}`")]
    Checksum(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the offending record id to an error.
    pub fn in_record(self, id: impl Into<String>) -> Self {
        Error::Record {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// Whether the error stems from bad user input rather than a runtime fault.
    /// The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Record { source, .. } => source.is_validation(),
            Error::Io { .. } | Error::NonFiniteLoss(_) => false,
            _ => true,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
