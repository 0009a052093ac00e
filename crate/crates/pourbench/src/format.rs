//! Errors shared by the file formats.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Version written into every JSON document this crate produces.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{origin}:{line}:{column}: parse error: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}:{line}: {message}")]
    InvalidLine { origin: String, line: usize, message: String },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(origin: &str, line_offset: usize, e: &serde_json::Error) -> Self {
        FormatError::Parse {
            origin: origin.to_string(),
            line: e.line() + line_offset,
            column: e.column(),
            message: strip_location(&e.to_string()),
        }
    }

    pub fn invalid(origin: &str, message: impl ToString) -> Self {
        FormatError::Invalid { origin: origin.to_string(), message: message.to_string() }
    }

    /// Line number for line-oriented formats, if known.
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Parse { line, .. } | FormatError::InvalidLine { line, .. } => Some(*line),
            _ => None,
        }
    }
}

// serde_json appends " at line L column C"; the location is reported separately.
fn strip_location(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

pub fn read_to_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| FormatError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialisation");
    out.push(b'\n');
    out
}
