//! Error taxonomy shared by the whole engine.
//!
//! Every error maps onto one of three coarse kinds that the CLI turns into
//! exit codes: configuration problems (2), unreadable or inconsistent data
//! (3), and numerical failures (4).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor / matrix dimensions disagree with what the operation needs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A tensor required by the model configuration is absent.
    #[error("missing tensor: {0}")]
    MissingTensor(String),

    /// An argument or configuration field is out of its valid domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A file exists but its contents cannot be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// Numerical failure: eigensolver non-convergence, non-finite values, a
    /// degenerate graph, and the like.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An internal invariant was violated (e.g. a hook returned attention
    /// rows that no longer sum to one).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes and the HTTP error body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) => ErrorKind::Config,
            Error::Shape(_) | Error::MissingTensor(_) | Error::Decode(_) | Error::Io { .. } => {
                ErrorKind::Data
            }
            Error::Numeric(_) | Error::Contract(_) => ErrorKind::Numeric,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl ErrorKind {
    /// Process exit code contract: 0 success, 2 config, 3 data, 4 numeric.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}
