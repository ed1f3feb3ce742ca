use thiserror::Error;

/// Errors raised by mesh construction, the discrete operators and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field does not match mesh: {what} has length {got}, expected {expected}")]
    MeshMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("unsupported Lebesgue exponent {0} (expected 2, 4, 6 or inf)")]
    UnsupportedExponent(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("maximum principle violated: density {value} outside [{lower}, {upper}] in cell {cell}")]
    MaxPrinciple {
        cell: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("{system} solve did not converge: relative residual {residual:e} > tolerance {tolerance:e}")]
    NonConvergence {
        system: &'static str,
        residual: f64,
        tolerance: f64,
        history: Vec<f64>,
    },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::MeshMismatch {
            what,
            got,
            expected,
        })
    }
}
