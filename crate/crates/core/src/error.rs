use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index out of bounds: {detail}")]
    Bounds { op: &'static str, detail: String },
    #[error("{op}: argument outside the real domain: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("state error: {0}")]
    State(String),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },
    #[error("codec error at byte {offset}: {detail}")]
    Codec { offset: usize, detail: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("structure mismatch: {0}")]
    Structure(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
