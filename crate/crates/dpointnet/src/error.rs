//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    Shape(String),
    /// A forward op produced NaN or Inf from finite inputs, or was fed
    /// non-finite values.
    Numeric(String),
    /// Invalid configuration (field ranges, partition sums, width chains).
    Config(String),
    /// Malformed input data (truncated files, misaligned records).
    Format(String),
    /// An operation was asked to run on data it cannot accept
    /// (empty cloud, empty group, missing positives where required).
    Empty(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Empty(m) => write!(f, "empty input: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand used by ops that validate shapes inline.
macro_rules! shape_err {
    ($($arg:tt)*) => {
        return Err(crate::error::Error::Shape(format!($($arg)*)))
    };
}
pub(crate) use shape_err;
