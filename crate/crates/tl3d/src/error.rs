//! Crate-wide error type.
//!
//! Tensor-level shape violations are programming errors and panic with a
//! diagnostic naming both shapes; everything reachable from user input
//! (configs, files, geometry arguments, training divergence) comes back as
//! a [`Error`] so the CLI can map it to a distinct exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),

    #[error("version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("numeric divergence: {0}")]
    NumericDivergence(String),

    #[error("empty field: no density above threshold {0}")]
    EmptyField(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI. Each failure family gets its own
    /// nonzero code so scripts can tell them apart.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArg(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::VersionMismatch { .. } => 3,
            Error::NumericDivergence(_) => 4,
            Error::MissingCheckpoint(_) => 5,
            Error::EmptyField(_) => 6,
        }
    }
}
