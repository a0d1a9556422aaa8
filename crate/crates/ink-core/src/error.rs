//! Error types shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes incompatible with the requested operation.
    #[error("shape mismatch at {context}: {detail}")]
    Shape { context: String, detail: String },

    /// A computed value came out NaN or infinite.
    #[error("non-finite value at {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// An API precondition was violated (caller bug, not data).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed corpus, checkpoint, or other input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data(detail.into())
    }

    pub fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }

    /// Short machine-readable kind tag, used by the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Contract(_) => "data",
            Error::Numeric { .. } => "numeric",
            Error::Data(_) | Error::Io(_) | Error::Json(_) => "data",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
