use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },

    #[error("index ({i}, {j}) out of range for a {n1}x{n2} matrix")]
    Index { i: usize, j: usize, n1: usize, n2: usize },

    #[error("budget exhausted: {requested} requested for {account}, {remaining} remaining")]
    Budget {
        account: String,
        requested: usize,
        remaining: usize,
    },

    #[error("transcript replay diverged at record {index}: {reason}")]
    Replay { index: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv { .. } => 3,
            _ => 2,
        }
    }
}
