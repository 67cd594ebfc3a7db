use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or input value is out of its allowed range.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// Two arrays that must agree in size do not.
    #[error("shape mismatch at {location}: expected {expected}, got {actual}")]
    Shape {
        location: String,
        expected: usize,
        actual: usize,
    },

    /// A text file could not be parsed.
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    /// The operation requires a different model configuration.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
