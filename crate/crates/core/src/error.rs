use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("circuit syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown gate label `{0}`")]
    UnknownGate(String),

    #[error("matrix logarithm undefined: eigenvalue {re:.3e}{im:+.3e}i is too close to the branch cut")]
    BranchCut { re: f64, im: f64 },

    #[error("datasets do not cover the same circuits: {0}")]
    CircuitMismatch(String),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
