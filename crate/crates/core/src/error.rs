use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NocError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("no embedding for vocabulary token `{0}`")]
    MissingEmbedding(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown token `{0}`")]
    Lookup(String),
    #[error("held-out object `{object}` has only {found} test images (need {needed})")]
    Insufficient { object: String, found: usize, needed: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NocError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NocError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = NocError> = std::result::Result<T, E>;
