use std::path::PathBuf;

pub type Result<T, E = IoError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        source: Box<IoError>,
    },
    #[error("malformed raster at byte {offset}: {reason}")]
    MalformedRaster { offset: u64, reason: String },
    #[error("malformed proposal file at {field}{}: {reason}", id.as_ref().map(|i| format!(" (proposal {i:?})")).unwrap_or_default())]
    MalformedProposal {
        field: String,
        id: Option<String>,
        reason: String,
    },
    #[error("malformed manifest at {field}: {reason}")]
    MalformedManifest { field: String, reason: String },
    #[error("malformed {kind} document at {field}: {reason}")]
    MalformedDocument {
        kind: &'static str,
        field: String,
        reason: String,
    },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("run directory {} is locked by another process (remove {} if stale)", .0.parent().map(|p| p.display().to_string()).unwrap_or_default(), .0.display())]
    Locked(PathBuf),
    #[error("persisted state does not match this invocation: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Core(#[from] samdsk_core::Error),
}

impl IoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the error with the file it came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Self::Io { .. } | Self::InFile { .. }) => e,
            e => Self::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
