use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// An integral, moment or normalizer does not exist (or failed to converge).
    #[error("divergent: {0}")]
    Divergent(String),

    /// Coupling triple outside its admissible range.
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    /// Tensor or vector shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Misuse of the differentiation tape (non-scalar loss, reused tape, ...).
    #[error("autodiff contract violation: {0}")]
    Contract(String),

    /// A training step produced a NaN or infinity.
    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    /// Malformed binary or text input (IDX, checkpoint, CSV).
    #[error("format error: {0}")]
    Format(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
