use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected:?}, got {got:?}")]
    Dimension {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("degenerate (zero-norm) vector in {0}")]
    DegenerateVector(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("non-finite {term} at step {step}")]
    Divergence { term: String, step: u64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Dimension {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
