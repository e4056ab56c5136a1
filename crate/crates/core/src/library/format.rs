//! `SPLB` binary library files and their JSON manifest.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SPLB" | u32 version | u32 key_dim | u32 prefix_len | u32 model_dim
//!        | u32 embedding_count | u64 entry_count
//! per embedding: u32 len, UTF-8 id | u32 len, UTF-8 JSON metadata
//!                | prefix_len * model_dim f32, row-major
//! per entry:     u32 embedding ordinal | key_dim f32
//! ```
//!
//! The manifest (`<file>.manifest.json`) carries the build configuration and
//! provenance notes, which are not part of the binary payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    BuildConfig, EmbeddingMetadata, LibraryEntry, LibraryError, PromptEmbedding, PromptMatrix,
    SourcePromptLibrary,
};

pub const LIBRARY_MAGIC: [u8; 4] = *b"SPLB";
pub const LIBRARY_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 * 5 + 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version: expected {expected}, found {found}")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error(
        "file truncated at byte offset {offset}: needed {needed} more bytes, {available} available"
    )]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid UTF-8 string at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid metadata JSON at byte offset {offset}: {message}")]
    InvalidMetadata { offset: usize, message: String },
    #[error("{count} trailing bytes after the last entry at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("value too large for the file format: {what} = {value}")]
    Overflow { what: &'static str, value: usize },
    #[error("decoded library is invalid: {0}")]
    InvalidLibrary(#[from] LibraryError),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    /// Stable diagnostic code for callers that need to branch on the failure.
    pub fn code(&self) -> &'static str {
        match self {
            Self::BadMagic { .. } => "SPLB_BAD_MAGIC",
            Self::UnsupportedVersion { .. } => "SPLB_BAD_VERSION",
            Self::Truncated { .. } => "SPLB_TRUNCATED",
            Self::InvalidUtf8 { .. } => "SPLB_BAD_UTF8",
            Self::InvalidMetadata { .. } => "SPLB_BAD_METADATA",
            Self::TrailingBytes { .. } => "SPLB_TRAILING_BYTES",
            Self::Overflow { .. } => "SPLB_OVERFLOW",
            Self::InvalidLibrary(_) => "SPLB_INVALID_LIBRARY",
            Self::Manifest { .. } => "SPLB_BAD_MANIFEST",
            Self::Io { .. } => "SPLB_IO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub version: u32,
    pub key_dim: usize,
    pub prefix_len: usize,
    pub model_dim: usize,
    pub embedding_count: usize,
    pub entry_count: usize,
    pub build: Option<BuildConfig>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl LibraryManifest {
    /// Checks the manifest against the decoded header and copies its build
    /// config and provenance onto the library.
    pub fn attach(self, library: SourcePromptLibrary) -> Result<SourcePromptLibrary, String> {
        let expected = LibraryManifest {
            build: self.build,
            provenance: self.provenance.clone(),
            ..LibraryManifest::describe(&library)
        };
        if self != expected {
            return Err("manifest does not match the library header".into());
        }
        let library = match self.build {
            Some(build) => library.with_build_config(build),
            None => library,
        };
        Ok(library.with_provenance(self.provenance))
    }

    pub fn describe(library: &SourcePromptLibrary) -> Self {
        Self {
            version: LIBRARY_VERSION,
            key_dim: library.key_dim(),
            prefix_len: library.prefix_len(),
            model_dim: library.model_dim(),
            embedding_count: library.embeddings().len(),
            entry_count: library.len(),
            build: library.build_config().copied(),
            provenance: library.provenance().clone(),
        }
    }
}

fn to_u32(what: &'static str, value: usize) -> Result<u32, FormatError> {
    u32::try_from(value).map_err(|_| FormatError::Overflow { what, value })
}

fn put_str(buf: &mut Vec<u8>, what: &'static str, s: &str) -> Result<(), FormatError> {
    buf.extend_from_slice(&to_u32(what, s.len())?.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the binary part of a library.
pub fn encode_library(library: &SourcePromptLibrary) -> Result<Vec<u8>, FormatError> {
    let matrix_len = library.prefix_len() * library.model_dim();
    let mut buf = Vec::with_capacity(
        HEADER_LEN
            + library.embeddings().len() * (matrix_len * 4 + 64)
            + library.len() * (4 + library.key_dim() * 4),
    );
    buf.extend_from_slice(&LIBRARY_MAGIC);
    buf.extend_from_slice(&LIBRARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32("key_dim", library.key_dim())?.to_le_bytes());
    buf.extend_from_slice(&to_u32("prefix_len", library.prefix_len())?.to_le_bytes());
    buf.extend_from_slice(&to_u32("model_dim", library.model_dim())?.to_le_bytes());
    buf.extend_from_slice(&to_u32("embedding_count", library.embeddings().len())?.to_le_bytes());
    buf.extend_from_slice(&(library.len() as u64).to_le_bytes());

    for embedding in library.embeddings() {
        put_str(&mut buf, "id length", &embedding.id)?;
        let metadata =
            serde_json::to_string(&embedding.metadata).expect("metadata is plain strings");
        put_str(&mut buf, "metadata length", &metadata)?;
        put_f32s(&mut buf, embedding.matrix.values());
    }
    for entry in library.entries() {
        buf.extend_from_slice(&to_u32("embedding ordinal", entry.embedding)?.to_le_bytes());
        put_f32s(&mut buf, &entry.key);
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        if len > self.remaining() {
            return Err(FormatError::Truncated {
                offset: self.offset,
                needed: len,
                available: self.remaining(),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<(usize, &'a str), FormatError> {
        let len = self.u32()? as usize;
        let start = self.offset;
        let raw = self.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8 { offset: start })?;
        Ok((start, s))
    }

    /// Checks that `count` items of `item_len` bytes fit before allocating.
    fn reserve(&self, count: usize, item_len: usize) -> Result<(), FormatError> {
        let needed = count.saturating_mul(item_len);
        if needed > self.remaining() {
            return Err(FormatError::Truncated {
                offset: self.offset,
                needed,
                available: self.remaining(),
            });
        }
        Ok(())
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        self.reserve(count, 4)?;
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses the binary part of a library. Build configuration and provenance
/// live in the manifest and are left empty here.
pub fn decode_library(bytes: &[u8]) -> Result<SourcePromptLibrary, FormatError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic: [u8; 4] = r
        .take(4)
        .map_err(|_| {
            let mut found = [0u8; 4];
            found[..bytes.len()].copy_from_slice(bytes);
            FormatError::BadMagic {
                expected: LIBRARY_MAGIC,
                found,
            }
        })?
        .try_into()
        .unwrap();
    if magic != LIBRARY_MAGIC {
        return Err(FormatError::BadMagic {
            expected: LIBRARY_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != LIBRARY_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: LIBRARY_VERSION,
            found: version,
        });
    }
    let key_dim = r.u32()? as usize;
    let prefix_len = r.u32()? as usize;
    let model_dim = r.u32()? as usize;
    let embedding_count = r.u32()? as usize;
    let entry_count = usize::try_from(r.u64()?).unwrap_or(usize::MAX);
    let matrix_len = prefix_len.saturating_mul(model_dim);

    // each embedding needs at least its two length prefixes and its matrix
    r.reserve(
        embedding_count,
        8usize.saturating_add(matrix_len.saturating_mul(4)),
    )?;
    let mut embeddings = Vec::with_capacity(embedding_count);
    for _ in 0..embedding_count {
        let (_, id) = r.string()?;
        let (meta_offset, meta) = r.string()?;
        let metadata: EmbeddingMetadata =
            serde_json::from_str(meta).map_err(|e| FormatError::InvalidMetadata {
                offset: meta_offset,
                message: e.to_string(),
            })?;
        let values = r.f32s(matrix_len)?;
        embeddings.push(PromptEmbedding {
            id: id.to_owned(),
            metadata,
            matrix: PromptMatrix::new(prefix_len, model_dim, values)?,
        });
    }

    r.reserve(
        entry_count,
        4usize.saturating_add(key_dim.saturating_mul(4)),
    )?;
    let mut entries = Vec::with_capacity(entry_count);
    for ordinal in 0..entry_count {
        let embedding = r.u32()? as usize;
        let key = r.f32s(key_dim)?;
        entries.push(LibraryEntry {
            ordinal,
            embedding,
            key,
        });
    }
    if r.remaining() > 0 {
        return Err(FormatError::TrailingBytes {
            offset: r.offset,
            count: r.remaining(),
        });
    }
    Ok(SourcePromptLibrary::from_parts(
        key_dim, prefix_len, model_dim, embeddings, entries,
    )?)
}

/// `lib.splb` -> `lib.splb.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes the binary file and its manifest next to it.
pub fn save_library(library: &SourcePromptLibrary, path: &Path) -> Result<(), FormatError> {
    let bytes = encode_library(library)?;
    fs::write(path, bytes).map_err(io_error(path))?;
    let manifest_file = manifest_path(path);
    let manifest = serde_json::to_string_pretty(&LibraryManifest::describe(library))
        .expect("manifest serializes");
    fs::write(&manifest_file, manifest).map_err(io_error(&manifest_file))?;
    Ok(())
}

/// Reads a library file. The manifest is optional; when present it must
/// agree with the binary header.
pub fn load_library(path: &Path) -> Result<SourcePromptLibrary, FormatError> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    let mut library = decode_library(&bytes)?;
    let manifest_file = manifest_path(path);
    match fs::read_to_string(&manifest_file) {
        Ok(text) => {
            let bad = |message: String| FormatError::Manifest {
                path: manifest_file.clone(),
                message,
            };
            let manifest: LibraryManifest =
                serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            library = manifest.attach(library).map_err(bad)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_error(&manifest_file)(e)),
    }
    Ok(library)
}
