use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at example {index}: {what}")]
    Numeric { index: usize, what: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("color {0} is not present in the scene")]
    MissingColor(usize),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("class {0} has no examples")]
    Coverage(usize),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("not enough frames labeled {activity} at least {min_gap} apart")]
    DataSparsity { activity: usize, min_gap: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("empty data: {0}")]
    Empty(String),
}

impl Error {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
