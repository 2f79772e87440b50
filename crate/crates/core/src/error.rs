//! Crate-wide error type.
//!
//! Variants map onto the process exit codes used by the CLI: configuration
//! problems exit 1, numerical aborts exit 2, and I/O or file-format problems
//! exit 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A primitive was called with incompatible tensor shapes.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid configuration value, argument, or precondition violation.
    #[error("invalid: {0}")]
    Invalid(String),

    /// Training produced a non-finite value and the run must abort.
    #[error("numerical abort: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact (checkpoint, dataset dump, config) is corrupt.
    /// `offset` is the byte position at which decoding failed.
    #[error("corrupt data at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Exit code for the CLI: 1 config, 2 numerical, 3 I/O or format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. } | Error::Invalid(_) => 1,
            Error::Numeric(_) => 2,
            Error::Io(_) | Error::Format { .. } => 3,
        }
    }
}
