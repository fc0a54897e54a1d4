use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),

    #[error("gradient for `{0}` is not finite")]
    NonFiniteGradient(String),

    #[error("no parameter matches prefix `{0}`")]
    NoSuchParameter(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("rollout is empty")]
    EmptyRollout,

    #[error("seed list is empty")]
    EmptySeeds,

    #[error("at least two strategy summaries are required, got {0}")]
    TooFewSummaries(usize),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors raised by numerical failure during training, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_)
        )
    }
}
