use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("missing artifact {0}")]
    Missing(PathBuf),

    #[error("{path}:{line}: malformed JSON: {source}")]
    MalformedLine { path: PathBuf, line: usize, source: serde_json::Error },

    #[error("{path}: {source}")]
    MalformedFile { path: PathBuf, source: serde_json::Error },

    #[error("{path}: {source}")]
    Data { path: PathBuf, source: relabel_core::Error },

    #[error("{path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("{path}: unsupported model file version {version}")]
    ModelVersion { path: PathBuf, version: u8 },

    #[error("correction log {path}: {reason}")]
    CorruptLog { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] relabel_core::Error),

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }
}
