use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed sidecar {}: {msg}", path.display())]
    MalformedSidecar { path: PathBuf, msg: String },
    #[error("dimension mismatch in {}: {msg}", path.display())]
    DimensionMismatch { path: PathBuf, msg: String },
    #[error("malformed image {}: {msg}", path.display())]
    Pnm { path: PathBuf, msg: String },
    #[error("{}:{line}: schema violation: {msg}", path.display())]
    SchemaViolation { path: PathBuf, line: usize, msg: String },
    #[error("measurement view for {capture_id} not found at {}", path.display())]
    MissingMeasXyz { capture_id: String, path: PathBuf },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("remote call failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Core(#[from] measground_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status: 2 for IO and remote failures, 1 for everything
    /// that is a validation failure.
    pub fn exit_code(&self) -> i32 {
        use measground_core::Error as C;
        match self {
            Error::MissingFile(_) | Error::Io { .. } | Error::Remote(_) | Error::MissingMeasXyz { .. } => 2,
            Error::Core(C::AnnotatorUnavailable(_) | C::JudgeUnavailable(_)) => 2,
            _ => 1,
        }
    }
}
