use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum MonError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient samples: need at least 2, got {0}")]
    InsufficientSamples(u64),

    #[error("non-finite model output at sample {index}")]
    NonFinite { index: u64 },

    #[error("degenerate input covariance")]
    DegenerateInput,

    #[error("degenerate output dimension {0}")]
    DegenerateOutput(usize),

    #[error("singular output covariance")]
    SingularOutput,

    #[error("no closed form for general noise")]
    NoClosedForm,

    #[error("wrong model form: expected {expected}, got {actual}")]
    WrongForm {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("eigendecomposition failed")]
    EigenFailure,

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("unknown variant '{variant}' for model '{model}'")]
    UnknownVariant { model: String, variant: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MonError {
    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MonError::DimensionMismatch(_)
                | MonError::NotSymmetric(_)
                | MonError::NoClosedForm
                | MonError::WrongForm { .. }
                | MonError::UnknownModel(_)
                | MonError::UnknownVariant { .. }
                | MonError::InvalidParameter(_)
                | MonError::Config(_)
                | MonError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, MonError>;
