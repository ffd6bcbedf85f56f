use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Bad input: wrong shape, out-of-range parameter, malformed configuration.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular triangular matrix: diagonal entry {index} is {value:e}")]
    Singular { index: usize, value: f64 },

    #[error("non-positive eigenvalue {value:e} at index {index}")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// Two eigenvalues are closer than the configured gap floor, so the
    /// eigenvector derivative is unbounded.
    #[error("degenerate eigenvalues {i} and {j}: gap {gap:e} below floor {floor:e}")]
    Degenerate {
        i: usize,
        j: usize,
        gap: f64,
        floor: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Operation not allowed in the current layer state.
    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
