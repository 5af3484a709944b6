use thiserror::Error;

/// Errors produced while building, solving, or persisting a problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("boundary matrix is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("KKT matrix is numerically singular (pivot ratio {pivot_ratio:.3e}, rho {rho})")]
    SingularKkt { pivot_ratio: f64, rho: f64 },

    #[error("could not place {what} after {attempts} rejections")]
    Placement { what: &'static str, attempts: usize },

    #[error("problem failed validation: {0}")]
    InvalidProblem(String),

    #[error("factorization cache: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Error {
    Error::Validation {
        field,
        message: message.into(),
    }
}
