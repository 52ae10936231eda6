use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt container: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("manifest error: missing role `{0}`")]
    MissingRole(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("shape error for role `{role}`: expected {expected:?}, got {got:?}")]
    Shape {
        role: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incompatible models: {0}")]
    Incompatible(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
