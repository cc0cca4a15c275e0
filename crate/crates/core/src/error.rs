use thiserror::Error;

/// Errors raised by the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("duplicate index: {0}")]
    DuplicateIndex(String),

    #[error("dense matrix of side {side} exceeds the cap of {cap}")]
    CapExceeded { side: usize, cap: usize },

    #[error("reduced matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero probe symbol at TF bin ({n}, {m}) of antenna {antenna}")]
    ZeroProbe { antenna: usize, n: usize, m: usize },

    #[error("DD bin ({k}, {l}) of antenna {antenna} must be zero under the private-bin plan")]
    NonZeroReservedBin { antenna: usize, k: usize, l: usize },

    #[error("no channel taps above the detection threshold")]
    EmptyChannel,

    #[error("{solver} did not converge after {iterations} iterations")]
    NotConverged { solver: &'static str, iterations: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_mismatch(expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
