use thiserror::Error;

/// Library-wide error type.
///
/// `CapExceeded` is reserved for requests that are well-formed but too large
/// for an exact routine's configured cap; callers that map errors to process
/// exit codes rely on this distinction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cap exceeded: {what} is {got}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        got: u64,
        cap: u64,
    },

    /// The dense-subset search of the core construction found nothing; this is
    /// a legitimate outcome at small scale and is reported, never patched over.
    #[error("no dense subset: {0}")]
    NoDenseSubset(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
