use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("time {t} s is outside [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },

    #[error("index {index} out of range for {len} snippets")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("manifest entry {index}: {message}")]
    Entry { index: usize, message: String },

    #[error("narration failed for video {video_id} at t={timestamp}: {message}")]
    Narration { video_id: String, timestamp: f64, message: String, remote: bool },

    #[error("remote narrator failure: {0}")]
    Remote(String),

    #[error("config fingerprint mismatch: checkpoint has {found}, expected {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch} (batch {batch_ids:?}); parameter norms: {norms}")]
    NonFinite { epoch: usize, batch_ids: Vec<String>, norms: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
