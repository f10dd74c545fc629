//! Shared error type for the core library.

/// Errors surfaced by tensor math, tokenization, model evaluation and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of two operands do not line up for the requested operation.
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A NaN or infinity reached a place where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An index (token id, target id, code index) fell outside its valid range.
    #[error("{context}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        context: String,
        index: usize,
        bound: usize,
    },

    /// A structurally invalid configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Invalid or degenerate input data (empty corpus, empty record field, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A sequence does not fit the model context.
    #[error("sequence of {len} tokens exceeds maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },

    /// A loss was requested over an empty (all-masked-out) position set.
    #[error("loss over empty position set: {0}")]
    EmptyLoss(String),

    /// A serialized artifact is structurally corrupt.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
