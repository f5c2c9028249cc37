use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures talking to an infill or embedding backend.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Connection-level failure. Safe to retry; `attempts` is how many were made.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The peer answered but the message was malformed or rejected.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("text contains reserved token {token:?}")]
    ReservedToken { token: String },

    #[error("missing template field {0:?}")]
    MissingField(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("pool holds {available} example(s) but {required} are required")]
    InsufficientPool { required: usize, available: usize },

    #[error("length mismatch: {left} candidate(s) vs {right} reference(s)")]
    LengthMismatch { left: usize, right: usize },

    #[error("checkpoint integrity failure at round {round}: {reason}")]
    Integrity { round: usize, reason: String },

    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
