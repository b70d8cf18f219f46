use std::fmt;

/// Unified error type for the library and CLI.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    Shape(String),
    /// Invalid configuration value, unknown key, or inconsistent settings.
    Config(String),
    /// API contract violated (e.g. non-scalar loss, level mismatch).
    Contract(String),
    /// Object used in a state that does not permit the operation
    /// (e.g. backward called twice on one tape).
    State(String),
    /// Data ingestion failure; carries the 1-based CSV row when known.
    Ingest { row: Option<usize>, msg: String },
    /// Numerical failure during optimization (NaN/Inf loss).
    Numeric(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn ingest(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingest { row, msg: msg.into() }
    }

    /// Process exit code for the CLI contract: 2 for user/config errors,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Ingest { row: Some(r), msg } => write!(f, "ingestion error at row {r}: {msg}"),
            Error::Ingest { row: None, msg } => write!(f, "ingestion error: {msg}"),
            Error::Numeric(m) => write!(f, "numerical error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
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

pub type Result<T> = std::result::Result<T, Error>;
