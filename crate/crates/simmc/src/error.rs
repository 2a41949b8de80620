use std::fmt;
use std::io;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// A data file failed to parse; carries the file and 1-based line.
    Parse {
        file: String,
        line: u64,
        msg: String,
    },
    /// Input data is structurally inconsistent (schema, shapes, duplicate keys).
    Format(String),
    /// An operation was invoked in an invalid order (e.g. backward without forward).
    State(String),
    /// A checkpoint file is missing, malformed, or incompatible.
    Checkpoint(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Parse { file, line, msg } => write!(f, "parse error: {file}:{line}: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
