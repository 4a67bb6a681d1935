use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("finite-difference oracle produced a non-finite value at coordinate {index}")]
    OracleFailure { index: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("text contains no non-padding tokens")]
    EmptyText,

    #[error("forward cache does not match parameters: {0}")]
    Cache(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
