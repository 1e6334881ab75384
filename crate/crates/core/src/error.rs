use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or input violated an operation's precondition.
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    /// The observed noisy state cannot be produced from the given clean state.
    #[error("unreachable state: {0}")]
    Unreachable(String),

    /// The noisy state is inconsistent with every template in the data set.
    #[error("off-manifold state at t={t}: no template can produce it")]
    OffManifold { t: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sampling failed after {attempts} restarts: {last}")]
    RestartsExhausted { attempts: usize, last: String },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
