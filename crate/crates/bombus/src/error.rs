use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] bombus_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{path}:{line}: {source}")]
    Record { path: PathBuf, line: usize, source: bombus_core::Error },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset \"{0}\"")]
    UnknownPreset(String),

    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("artifact {path}: checksum mismatch for {file}")]
    Checksum { path: PathBuf, file: String },

    #[error("artifact {path}: format version {found}, expected {expected}")]
    FormatVersion { path: PathBuf, found: u32, expected: u32 },

    #[error("invalid report: {0}")]
    Report(String),

    #[error("unknown report format \"{0}\"")]
    UnknownFormat(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Stable snake_case identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) | Error::Record { source: e, .. } => e.kind(),
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Image { .. } | Error::Decode(_) => "invalid_image",
            Error::Config(_) => "invalid_config",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Artifact { .. } => "invalid_artifact",
            Error::Checksum { .. } => "checksum_mismatch",
            Error::FormatVersion { .. } => "format_version",
            Error::Report(_) => "invalid_report",
            Error::UnknownFormat(_) => "unknown_format",
            Error::Usage(_) => "usage",
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    pub(crate) fn artifact(path: &Path, message: impl Into<String>) -> Self {
        Error::Artifact { path: path.to_path_buf(), message: message.into() }
    }
}
