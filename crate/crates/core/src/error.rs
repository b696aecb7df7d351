//! Crate-wide error type with a coarse classification used for exit codes.

use std::path::PathBuf;

use thiserror::Error;

use crate::scalar::Precision;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class; the CLI maps these onto process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or arguments.
    Config,
    /// Numeric degeneracy (undefined softmax row, undefined similarity).
    Numeric,
    /// File system or on-disk format failures.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("degenerate softmax row: {message}")]
    DegenerateRow { message: String },

    #[error("cosine similarity undefined: an input has zero norm")]
    UndefinedSimilarity,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic: expected {expected}, found {found}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: unknown precision code {code}")]
    BadPrecisionCode { path: PathBuf, code: u8 },

    #[error("{path}: stored precision is {found}, expected {expected}")]
    PrecisionMismatch {
        path: PathBuf,
        expected: Precision,
        found: Precision,
    },

    #[error("{path}: invalid dimensions rows={rows} cols={cols}: {why}")]
    BadDims {
        path: PathBuf,
        rows: u64,
        cols: u64,
        why: &'static str,
    },

    #[error("{path}: truncated payload: need {expected} bytes, file has {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingData { path: PathBuf, extra: usize },

    #[error("{path}: non-finite element at index {index}")]
    NonFinite { path: PathBuf, index: usize },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn degenerate(message: impl Into<String>) -> Self {
        Error::DegenerateRow {
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument { .. } => ErrorKind::Config,
            Error::DegenerateRow { .. } | Error::UndefinedSimilarity => ErrorKind::Numeric,
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::BadPrecisionCode { .. }
            | Error::PrecisionMismatch { .. }
            | Error::BadDims { .. }
            | Error::Truncated { .. }
            | Error::TrailingData { .. }
            | Error::NonFinite { .. } => ErrorKind::Io,
        }
    }
}
