use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller broke an operation's precondition (shapes, ranges, missing inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input outside the mathematical domain of an operation, e.g. log of a nonpositive value.
    #[error("numeric domain error: {0}")]
    Domain(String),

    /// A forward or training computation produced NaN/Inf.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no users are shared between the source and target domains")]
    NoOverlap,

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command line front-end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Contract(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
