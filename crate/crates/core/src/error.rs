//! Error type shared by all core modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Dimension or shape disagreement between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called in a state or with arguments it cannot accept.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be parsed. `line` is 1-based and 0 when the error is
    /// not tied to a specific line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training produced a non-finite loss.
    #[error("divergence at iteration {iteration}: {what} is non-finite")]
    Diverged { iteration: usize, what: String },

    /// The message already embeds the io::Error text (and the path where
    /// known), so the cause is not exposed as a separate source to avoid
    /// printing it twice in error chains.
    #[error("io error: {0}")]
    Io(std::io::Error),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e)
    }
}

impl CoreError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::Shape(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CoreError::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        CoreError::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
