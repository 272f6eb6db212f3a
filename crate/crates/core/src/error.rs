use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DftError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DftError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: integrity check failed for {what}: expected {expected}, found {actual}")]
    Integrity {
        path: PathBuf,
        what: String,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: invalid json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("non-finite {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: &'static str },

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl DftError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DftError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        DftError::Contract(msg.into())
    }
}
