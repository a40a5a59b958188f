use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inputs that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A formula was evaluated outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An internal identity (e.g. wealth conservation) no longer holds.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("degenerate market: implied probability {p_imp} is at the clamp boundary")]
    DegenerateMarket { p_imp: f64 },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("non-finite aggregate `{quantity}` at period {period}")]
    NonFinite {
        quantity: &'static str,
        period: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format version mismatch in {path}: found {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("malformed {section}: {detail}")]
    Format { section: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(section: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            section: section.into(),
            detail: detail.into(),
        }
    }
}
