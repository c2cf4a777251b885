use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to read input stream")]
    Stream(#[from] std::io::Error),
    #[error("{what} at line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no vector for text {text:?} in {provider}")]
    MissingVector { provider: String, text: String },
    #[error("embedding provider {provider} failed on {text:?}: {msg}")]
    Provider {
        provider: String,
        text: String,
        msg: String,
    },
    #[error("input #{offset} failed")]
    BatchItem {
        offset: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("provider mismatch: index built with {index}, linking with {provider}")]
    ProviderMismatch { index: String, provider: String },
    #[error("target database has no cities")]
    EmptyDatabase,
    #[error("null ground truth")]
    NullTruth,
    #[error("length mismatch: {predictions} predictions vs {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("json error")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            line,
            msg: msg.into(),
        }
    }

    /// True when the failure traces back to bad user input rather than an
    /// internal fault or an unreachable provider.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::InvalidArgument(_)
            | Error::EmptyDatabase
            | Error::NullTruth
            | Error::LengthMismatch { .. }
            | Error::ProviderMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::MissingVector { .. }
            | Error::Json(_) => true,
            Error::BatchItem { source, .. } => source.is_input_error(),
            Error::Stream(_) | Error::ZeroVector | Error::Provider { .. } => false,
        }
    }
}
