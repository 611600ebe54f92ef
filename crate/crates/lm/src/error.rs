use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize, batch: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LmError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LmError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = LmError> = std::result::Result<T, E>;
