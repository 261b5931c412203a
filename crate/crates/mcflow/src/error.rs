//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver did not converge: {context} (iterations {iterations}, relative residual {relres:.3e})")]
    NonConverged {
        context: String,
        iterations: usize,
        relres: f64,
    },

    #[error("ILU factorization failed: zero pivot at row {row}")]
    ZeroPivot { row: usize },

    #[error("matrix is singular to working precision (column {col})")]
    SingularMatrix { col: usize },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("basis solve failed for coarse cell {cell}, continuum {continuum}: {reason}")]
    BasisFailure {
        cell: usize,
        continuum: usize,
        reason: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("time step failed at step {step}: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
