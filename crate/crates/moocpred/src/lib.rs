//! File formats, checkpoints, report rendering, and pipeline plumbing around
//! the core crate. Everything here touches the filesystem or spawns threads;
//! the math lives in `moocpred-core`.

use std::path::{Path, PathBuf};

use moocpred_core::error::CoreError;

pub mod checkpoint;
pub mod config;
pub mod io;
pub mod jobs;
pub mod pipeline;
pub mod report;
pub mod scenario;

/// Everything that can go wrong outside the core math, carrying enough
/// context to name the offending file. [`Error::exit_code`] fixes the
/// process-level contract: 2 config, 3 data, 4 training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(CoreError::Config(_)) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::Core(CoreError::Data(_)) => 3,
            Error::Core(CoreError::Numeric(_)) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Reads a file into a string, naming it on failure.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serializes a value as pretty JSON with a trailing newline. One shared
/// writer keeps every artifact byte-stable across reruns.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// Parses a JSON file into `T`, naming the file on failure.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
