use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse model: {0}")]
    Parse(String),

    #[error("layer {layer}: dimension mismatch ({detail})")]
    LayerShape { layer: usize, detail: String },

    #[error("unknown activation `{0}` (expected relu, sigmoid, tanh or arctan)")]
    UnknownActivation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value at layer {layer}")]
    NonFinite { layer: usize },

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error at row {row}: {detail}")]
    Dataset { row: usize, detail: String },

    #[error("loss or gradient is not finite")]
    NonFiniteLoss,

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
