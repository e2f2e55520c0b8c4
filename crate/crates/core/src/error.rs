use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature id {id} out of range (n = {n}) at batch position {position}")]
    IdOutOfRange { id: u64, n: usize, position: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("capacity exhausted: {0}")]
    Capacity(String),

    #[error("infeasible plan for {method}: budget {budget_bytes} bytes, nearest achievable {nearest_bytes} bytes")]
    Infeasible {
        method: String,
        budget_bytes: usize,
        nearest_bytes: usize,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
