use std::fmt;

/// Library-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not agree (matmul inner dims, zip shapes, ...).
    Shape(String),
    /// Input is outside the operation's domain (empty tensor, too-short series, T = 0).
    Domain(String),
    /// A produced value is NaN or infinite.
    Numeric(String),
    /// A cache or state object does not belong to the call it was handed to.
    Contract(String),
    /// Bad configuration: unknown model name, zero max_epochs, invalid flag value.
    Config(String),
    /// A data file could not be ingested; `line` is 1-based and counts the header.
    Ingest { line: usize, message: String },
    /// Training produced a non-finite loss at the given epoch.
    Diverged { epoch: usize },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Numeric(msg) => write!(f, "non-finite value: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Ingest { line, message } => write!(f, "ingestion error at line {line}: {message}"),
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}: loss is not finite"),
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

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
