//! Crate-wide error type with process exit-code mapping.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the forecasting pipeline.
///
/// Each variant corresponds to one process exit code so the CLI can translate
/// failures without inspecting message text: configuration problems exit 2,
/// data problems exit 3, numeric failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad key, bad preset, bad flag).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid, missing, or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure (non-finite loss, degenerate denominator, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Filesystem failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Builds a configuration error from any displayable message.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Builds a data error from any displayable message.
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Builds a numeric-failure error from any displayable message.
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for this error class (success is 0).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
