use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Core(#[from] wotf_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = ProbeError> = std::result::Result<T, E>;

impl ProbeError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        ProbeError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        ProbeError::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProbeError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProbeError::Core(wotf_core::Error::InvalidConfig { .. })
            | ProbeError::Config { .. } => "config",
            ProbeError::Core(_) => "computation",
            ProbeError::Io { .. } => "io",
            ProbeError::Format { .. } => "format",
            ProbeError::Usage(_) => "usage",
        }
    }

    /// Machine-readable form printed on failure.
    pub fn record(&self) -> ErrorRecord {
        let (field, path) = match self {
            ProbeError::Config { field, .. } => (Some(field.clone()), None),
            ProbeError::Core(wotf_core::Error::InvalidConfig { field, .. }) => {
                (Some(field.to_string()), None)
            }
            ProbeError::Io { path, .. } | ProbeError::Format { path, .. } => {
                (None, Some(path.display().to_string()))
            }
            _ => (None, None),
        };
        ErrorRecord {
            error: self.kind(),
            message: self.to_string(),
            field,
            path,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}
