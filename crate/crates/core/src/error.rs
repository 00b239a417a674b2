use std::path::PathBuf;

use crate::train::Checkpoint;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} has dimension {left_dim}, {right} has dimension {right_dim}")]
    DimensionMismatch { left: String, left_dim: usize, right: String, right_dim: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("query too long: query has {query} frames but utterance has {utterance}")]
    QueryTooLong { query: usize, utterance: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("tensor format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged at epoch {}: {reason}", checkpoint.epoch)]
    Diverged { reason: String, checkpoint: Box<Checkpoint> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(left: impl Into<String>, left_dim: usize, right: impl Into<String>, right_dim: usize) -> Self {
        Error::DimensionMismatch { left: left.into(), left_dim, right: right.into(), right_dim }
    }

    /// True for errors caused by the filesystem rather than by the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
