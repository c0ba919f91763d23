//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    InvalidArgument(String),
    /// An operation was called in a state it does not support.
    InvalidState(String),
    /// Configuration could not be parsed or validated.
    Config(String),
    /// A dataset, checkpoint, or input file is missing or corrupt.
    Data(String),
    /// Scene generation could not satisfy its constraints.
    Generation(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::InvalidState(m) => write!(f, "invalid state: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 data/io, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::InvalidArgument(_) | Error::InvalidState(_) | Error::Generation(_) => 4,
        }
    }
}
