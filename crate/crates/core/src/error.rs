use thiserror::Error;

/// Errors surfaced by the lab's operations and file formats.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid rational literal {0:?}")]
    BadRational(String),

    #[error("{what} exceeds cap: requested {requested}, cap {cap}")]
    CapExceeded {
        what: String,
        requested: u128,
        cap: u128,
    },

    #[error("unknown vertex {vertex} (graph has {n} vertices)")]
    UnknownVertex { vertex: usize, n: usize },

    #[error("iteration {t} not computed (history has {len} rounds)")]
    UnknownIteration { t: usize, len: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LabError::Invalid(msg.into())
    }
}
