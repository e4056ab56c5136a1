use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use spl_client::ClientError;
use spl_core::api::{ErrorKind, InputFileError};
use spl_core::library::{manifest_path, LibraryManifest};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Validation(String),
    /// Exit code 3.
    Format(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Format(_) => 3,
            Self::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid input: {m}"),
            Self::Format(m) => write!(f, "{m}"),
            Self::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { kind, .. } => match kind {
                ErrorKind::Validation | ErrorKind::NotFound => Self::Validation(e.to_string()),
                ErrorKind::Format => Self::Format(e.to_string()),
                ErrorKind::Internal => Self::Other(e.to_string()),
            },
            ClientError::Http(_) => Self::Format(e.to_string()),
            ClientError::Decode { .. } => Self::Other(e.to_string()),
        }
    }
}

pub fn check_input(path: &Path, result: Result<(), InputFileError>) -> Result<(), CliError> {
    result.map_err(|e| match e {
        InputFileError::Version { .. } => CliError::Format(format!("{}: {e}", path.display())),
        _ => CliError::Validation(format!("{}: {e}", path.display())),
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Format(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Format(format!("cannot read {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Format(format!("{}: malformed JSON: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Format(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Library bytes plus the manifest next to them, if there is one.
pub fn read_library(path: &Path) -> Result<(Vec<u8>, Option<LibraryManifest>), CliError> {
    let bytes = read_bytes(path)?;
    let manifest_file = manifest_path(path);
    let manifest = if manifest_file.exists() {
        Some(read_json(&manifest_file)?)
    } else {
        None
    };
    Ok((bytes, manifest))
}

pub fn write_library(
    path: &Path,
    bytes: &[u8],
    manifest: &LibraryManifest,
) -> Result<(), CliError> {
    write_bytes(path, bytes)?;
    write_json(&manifest_path(path), manifest)
}

pub fn parse_note(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}
