use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GlfcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GlfcError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checkpoint error for tensor `{tensor}`: {message}")]
    Checkpoint { tensor: String, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GlfcError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GlfcError::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        GlfcError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        GlfcError::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        GlfcError::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlfcError::Io {
            path: path.into(),
            source,
        }
    }
}
