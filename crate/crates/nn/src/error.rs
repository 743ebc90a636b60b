use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range for table with {len} rows")]
    Index { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        expected: expected.into(),
        actual: actual.into(),
    }
}
