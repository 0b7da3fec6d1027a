use thiserror::Error;

/// Errors produced by the tensor, convolution, model and training routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tensor size overflow: {0}")]
    Size(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid convolution geometry: {0}")]
    Geometry(String),
    #[error("invalid channel partition: {0}")]
    Partition(String),
    #[error("invalid mixconv spec: {0}")]
    Spec(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("unknown op `{0}`")]
    Lookup(String),
    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
