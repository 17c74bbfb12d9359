//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Lookup of a token, file or key that does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// A text file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A numeric routine produced NaN/Inf or could not evaluate.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Posterior is undefined for the given (p, q), e.g. p + q == 0.
    #[error("undefined posterior: {0}")]
    UndefinedPosterior(String),

    /// Checkpoint file is malformed, truncated or from a different version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A detection-set build ran out of attackable examples.
    #[error("detection set shortfall: requested {requested} pairs, achieved {achieved}")]
    Shortfall { requested: usize, achieved: usize },

    /// An experiment stage failed; wraps the underlying error with the stage name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Tag an error with the experiment stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
