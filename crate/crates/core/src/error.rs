use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis pipeline.
///
/// Variants are grouped into three failure classes (see [`Error::class`]) so
/// that front ends can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes {found:?} (expected \"ENC1\")")]
    BadMagic { found: [u8; 4] },

    #[error("truncated container: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error(
        "payload length {payload_bytes} does not match shape {shape:?} ({expected_bytes} bytes)"
    )]
    ShapeMismatch {
        shape: Vec<usize>,
        expected_bytes: u64,
        payload_bytes: u64,
    },

    #[error("malformed container header: {0}")]
    BadHeader(String),

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse failure class, used for exit codes and structured messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::ShapeMismatch { .. }
            | Error::BadHeader(_)
            | Error::UnsupportedDtype(_)
            | Error::Parse { .. } => ErrorClass::Io,
            Error::Invalid(_) | Error::Dimension(_) => ErrorClass::Config,
            Error::Numeric(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::Invalid(format!($($arg)*))
    };
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}

pub(crate) use dim_err;
pub(crate) use invalid;
