use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's domain (degenerate geometry, empty region, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are inconsistent with the run configuration (CRS mismatch, bad parameter).
    #[error("configuration error: {0}")]
    Config(String),

    /// A data file failed a schema or cross-reference check. `rows` holds the
    /// 1-based offending row numbers when known.
    #[error("ingestion error: {message}")]
    Ingestion { message: String, rows: Vec<u64> },

    /// Logistic fit detected perfect separation of the treatment groups.
    #[error("perfect separation: {0}; review the caliper or the covariate set")]
    Separation(String),

    /// A linear system was singular and no estimate could be produced.
    #[error("singular system: {0}")]
    Singular(String),

    /// Not enough usable observations for the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn ingestion(message: impl Into<String>, rows: Vec<u64>) -> Self {
        Error::Ingestion {
            message: message.into(),
            rows,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
