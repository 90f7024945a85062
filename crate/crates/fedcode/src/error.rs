use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fedcode_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: unsupported format version {found}", path.display())]
    FormatVersion { path: PathBuf, found: u32 },
    #[error("{}: checkpoint does not match its model spec", path.display())]
    CheckpointSpec { path: PathBuf },
    #[error("{} line {line}: {reason}", path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("registry already exists at {}", .0.display())]
    RegistryExists(PathBuf),
    #[error("no registry at {}", .0.display())]
    NoRegistry(PathBuf),
    #[error("registry at {} is locked by another writer; remove .lock if no writer is running", .0.display())]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
