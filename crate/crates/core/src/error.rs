//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulator, assignment, training, and harness code.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument value violated its contract. Names the
    /// offending field so CLI users can fix the config file directly.
    #[error("invalid parameter `{field}`: {message}")]
    Parameter { field: &'static str, message: String },

    /// Inputs were structurally inconsistent (NaN costs, duplicate prior
    /// assignments, mismatched query sets, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An operation was called in a state that cannot satisfy it.
    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(field: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            message: message.into(),
        }
    }

    /// True for errors a user can fix by editing config or arguments.
    /// The CLI maps these to exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Parameter { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
