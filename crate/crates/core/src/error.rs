use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid edit plan: {0}")]
    EditPlan(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite loss at step {step}: wce={wce} kl={kl}")]
    Diverged { step: usize, wce: f64, kl: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
