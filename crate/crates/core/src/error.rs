use thiserror::Error;

/// Errors raised across the crate.
///
/// Every variant maps to a short, stable category string (see
/// [`ScrError::category`]) that the CLI prints on failure.
#[derive(Debug, Error)]
pub enum ScrError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("sequence length {len} exceeds limit {max}")]
    Length { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("trace and parameters disagree: {0}")]
    Consistency(String),
    #[error("data mismatch: {0}")]
    Data(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl ScrError {
    pub fn category(&self) -> &'static str {
        match self {
            ScrError::Config(_) => "config",
            ScrError::Input(_) => "input",
            ScrError::Length { .. } => "length",
            ScrError::Shape(_) => "shape",
            ScrError::Numeric(_) => "numeric",
            ScrError::Consistency(_) => "consistency",
            ScrError::Data(_) => "data",
            ScrError::Io(_) => "io",
            ScrError::Format(_) => "format",
        }
    }
}

impl From<serde_json::Error> for ScrError {
    fn from(e: serde_json::Error) -> Self {
        ScrError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ScrError>;
