use thiserror::Error;

/// Errors raised across the library.
///
/// The variants map onto the process exit codes used by the command-line
/// front end: input problems (`Parse`, `Validation`, `State`) are user
/// errors, `Infeasible` is a well-formed request with no answer, and the
/// remainder are unexpected failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was applied to a matrix on the wrong scale.
    #[error("state error: {0}")]
    State(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unsupported model file: {0}")]
    Version(String),

    #[error("classifier adapter failed: {0}")]
    Adapter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
