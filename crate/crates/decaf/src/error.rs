//! Crate-wide error type.

/// Errors surfaced by the public API.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Feature-file container is malformed or truncated.
    #[error("container error: {0}")]
    Container(String),

    /// A forward or backward pass produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
