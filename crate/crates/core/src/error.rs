use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A metric or experiment cannot be computed from the data it was given.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("trace format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model version mismatch: found {found}, expected {expected}")]
    Version { found: u64, expected: u64 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("non-finite gradient for parameter {param}")]
    NonFinite { param: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) | Error::InvalidInput(_) => "input",
            Error::Degenerate(_) => "data",
            Error::Format(_) | Error::Parse { .. } => "format",
            Error::Version { .. } | Error::Corrupt(_) => "model",
            Error::NonFinite { .. } => "numeric",
            Error::Invariant(_) => "invariant",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
