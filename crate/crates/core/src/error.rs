use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate instance ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("embedding for {word:?} has {found} components, expected {expected}")]
    EmbeddingDimension {
        word: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("missing instances: {}", .0.join(", "))]
    MissingInstances(Vec<String>),

    #[error("unknown instances: {}", .0.join(", "))]
    UnknownInstances(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
