//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied setting is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Vector/matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A data file could not be parsed; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// An evaluation produced a non-finite value.
    #[error("numeric overflow: {0}")]
    Numeric(String),

    /// An iterate went non-finite during a run.
    #[error("diverged at round {round}, client {client}, local step {step}")]
    Diverged {
        round: usize,
        client: usize,
        step: usize,
    },

    /// A theory formula was queried outside its domain.
    #[error("theory precondition violated: {0}")]
    Theory(String),

    /// An empirical estimator had nothing usable to work with.
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
