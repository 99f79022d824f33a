use thiserror::Error;

/// Errors produced by the unmixing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },

    #[error("gram matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("active-set solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("cost became non-finite at iteration {0}")]
    NonFiniteCost(usize),

    #[error("pixels {indices:?} have near-zero projection onto v")]
    DegenerateProjection { indices: Vec<usize> },

    #[error("pixels {indices:?} are self-shadowed or facing away from the sensor")]
    Shadowed { indices: Vec<usize> },

    #[error("reflectance {0} outside the invertible range [0, 1]")]
    NonPhysical(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
