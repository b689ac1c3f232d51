use thiserror::Error;

/// Errors raised by the kernels, operators, and drivers in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("chunk offset {omega} out of range for chunk size {chunk}")]
    OffsetOutOfRange { omega: usize, chunk: usize },

    #[error("chunk size must be at least 1")]
    ZeroChunk,

    #[error(
        "iteration {iteration}: sequence length {len} is shorter than chunk size {chunk}, leaving no complete chunk"
    )]
    EmptySchedule { iteration: usize, len: usize, chunk: usize },

    #[error("head dimension {0} is odd; rotary embedding needs pairs")]
    OddHeadDim(usize),

    #[error("model dimension {d_model} is not divisible by head count {heads}")]
    HeadSplit { d_model: usize, heads: usize },

    #[error("malformed allocation {text:?}: {reason}")]
    Allocation { text: String, reason: String },

    #[error("invalid resolution {0}: must lie in (0, 1]")]
    Resolution(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("decode step {got} out of order, expected {expected}")]
    StepOrder { expected: usize, got: usize },

    #[error(
        "iteration {iteration}: shift {shift} < chunk size - 1 ({chunk} - 1) reads an unfinished chunk during decoding"
    )]
    NonCausalShift {
        iteration: usize,
        shift: usize,
        chunk: usize,
    },

    #[error("token id {token} outside vocabulary of size {vocab}")]
    Token { token: usize, vocab: usize },

    #[error("{0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
