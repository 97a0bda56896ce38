use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("no session directories found in {0}")]
    NoSessions(PathBuf),

    #[error("missing session file {0}")]
    MissingSession(PathBuf),

    #[error("participant {participant}: {source}")]
    Participant {
        participant: u32,
        #[source]
        source: mirrortrain_core::Error,
    },

    #[error(transparent)]
    Core(#[from] mirrortrain_core::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "invalid_config",
            Error::ConfigParse { .. } => "config_parse",
            Error::Io { .. } => "io",
            Error::Corrupt { .. } => "corrupt_session",
            Error::NoSessions(_) => "no_sessions",
            Error::MissingSession(_) => "missing_session",
            Error::Participant { .. } | Error::Core(_) => "computation",
            Error::ThreadPool(_) => "thread_pool",
        }
    }

    pub fn report(&self) -> ErrorReport {
        let field = match self {
            Error::Config { field, .. } => Some(field.clone()),
            Error::Core(mirrortrain_core::Error::InvalidParameter { field, .. }) => Some((*field).to_string()),
            _ => None,
        };
        let path = match self {
            Error::ConfigParse { path, .. } | Error::Io { path, .. } | Error::Corrupt { path, .. } => Some(path.clone()),
            Error::NoSessions(p) | Error::MissingSession(p) => Some(p.clone()),
            _ => None,
        };
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            field,
            path,
        }
    }
}
