use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up; `context` names the layer or operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    #[error("expected a scalar tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("replay buffer not ready: holds {have} transitions, need {need}")]
    NotReady { have: usize, need: usize },

    #[error("value out of representable range: {0}")]
    Range(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dimension(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
