use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates the documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    /// The request is well formed but the numerics cannot honour it.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A gate or hypothesis check failed, so the computation was not attempted.
    #[error("refused: {0}")]
    Refused(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParam(msg.into()))
}
