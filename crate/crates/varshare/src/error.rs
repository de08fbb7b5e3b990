//! Error type shared by the whole crate.

use thiserror::Error;

/// Unified error type for estimation, simulation, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The input data violate a structural requirement (dimensions, finiteness, ...).
    #[error("invalid data: {0}")]
    Data(String),
    /// An estimator could not produce a result on otherwise valid input.
    #[error("estimation failed: {0}")]
    Estimation(String),
    /// A file could not be parsed into the expected format.
    #[error("format error: {0}")]
    Format(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
