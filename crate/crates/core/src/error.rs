//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands have incompatible dimensions.
    #[error("shape mismatch in {context}: {left} vs {right}")]
    ShapeMismatch {
        context: String,
        left: String,
        right: String,
    },

    /// A NaN or infinity was produced or supplied where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A precondition on the inputs was violated.
    #[error("{0}")]
    Invalid(String),

    /// The input is degenerate for the requested operation (empty, constant, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A file could not be parsed.
    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: &str, left: impl std::fmt::Display, right: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub fn parse(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            message: message.into(),
        }
    }
}
