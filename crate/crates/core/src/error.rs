use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("client index {index} out of range (problem has {clients} clients)")]
    ClientOutOfRange { index: usize, clients: usize },

    #[error("component index {index} out of range (clients hold {n} components)")]
    ComponentOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("problem not strongly convex: regularized Gram matrix is singular")]
    NotStronglyConvex,

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("divergence detected at local step {step}")]
    Divergence { step: usize },

    #[error(transparent)]
    Parse(#[from] crate::data::ParseError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
