use thiserror::Error;

use crate::dist::wire::DecodeError;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. The CLI maps variants onto exit codes
/// (contract violations -> 3, transport failures -> 4).
#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition or invariant was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Buffer/camera shapes disagree.
    #[error("dimension mismatch: {0}")]
    Dimensions(String),

    /// A file did not match its on-disk format (magic, CRC, shape).
    #[error("format error: {0}")]
    Format(String),

    /// A wire frame failed to decode.
    #[error("protocol error: {0}")]
    Protocol(#[from] DecodeError),

    /// Connection or send/recv failure on a transport.
    #[error("transport failure: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn dimensions(msg: impl Into<String>) -> Self {
        Error::Dimensions(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
