use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("channel error: expected {expected} channels, got {actual}")]
    Channel { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported transposed-convolution kernel size {0} (expected 2, 4 or 6)")]
    UnsupportedKernel(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u16, num_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

pub type Result<T> = core::result::Result<T, Error>;
