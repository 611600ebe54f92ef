use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: malformed JSON at byte {offset}: {msg}")]
    Parse { path: PathBuf, offset: usize, msg: String },
    #[error("dialogue {dialogue}, turn {turn:?}: {msg}")]
    Validation { dialogue: String, turn: Option<usize>, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lm(#[from] kgtod_lm::LmError),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub(crate) fn validation(dialogue: &str, turn: Option<usize>, msg: impl Into<String>) -> Self {
        CoreError::Validation { dialogue: dialogue.to_string(), turn, msg: msg.into() }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
