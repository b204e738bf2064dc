use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadrature did not reach tolerance {requested:e} (achieved {achieved:e})")]
    Quadrature { requested: f64, achieved: f64 },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("operator bound {bound} is not a contraction (need < 1)")]
    NonContraction { bound: f64 },

    #[error("covariance embedding failed for kernel `{kernel}` on grid of {n_cols} points with spacing {dx}")]
    Embedding { kernel: String, n_cols: usize, dx: f64 },

    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
