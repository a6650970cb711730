use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("quantization scheme violated: {0}")]
    Quantization(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("lp solver failure: {0}")]
    Lp(String),
    #[error("verification refused: {0}")]
    Refused(String),
    #[error("attack search: {0}")]
    Search(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
