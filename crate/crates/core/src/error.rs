use thiserror::Error;

use crate::framework::Transcript;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The constraint set is empty (e.g. `c > 1` or `C < 1`).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed input file or configuration.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The score oracle failed mid-run. The trials completed so far are kept.
    #[error("oracle failure: {message}")]
    Oracle {
        message: String,
        partial: Option<Box<Transcript>>,
    },

    #[error("enumeration guard exceeded: {0}")]
    Guard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
