use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent configuration: mismatched dimensions, missing ansatz,
    /// multiplier state of the wrong size, unparsable config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value was produced during evaluation.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The optimizer failed to make progress and the run is abandoned.
    #[error("optimizer diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
