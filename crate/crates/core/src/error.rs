use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy the operation's contract.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: operands mix 32-bit and 64-bit precision")]
    Precision { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A loss, gradient or parameter became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The finite-difference oracle could not produce a gradient.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Malformed dataset file; the message names the offending field or row.
    #[error("ingestion error: {0}")]
    Ingest(String),

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
