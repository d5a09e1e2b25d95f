use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LorenError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("need at least {required} function values, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("objective returned a non-finite loss ({value}) at pass {pass} of step {step}")]
    NonFiniteLoss { step: u64, pass: usize, value: f64 },

    #[error("objective `{0}` has no analytic gradient")]
    MissingGradient(String),

    #[error("dense materialization of a {dim}x{dim} matrix exceeds the {limit} element guard")]
    SizeGuard { dim: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, LorenError>;
