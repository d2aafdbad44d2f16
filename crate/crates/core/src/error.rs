use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the workload pipeline.
///
/// The variants are grouped by how a caller should react: bad arguments,
/// bad input data, numerical breakdown, or I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is outside its valid domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data is malformed or inconsistent.
    #[error("{0}")]
    Data(String),

    /// A file failed to parse; carries the offending line when known.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A numerical routine could not produce a valid result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Validation,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
