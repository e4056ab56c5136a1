//! JSON bodies exchanged between the service and its clients.
//!
//! Documents written to disk by the CLI are these same types and all carry
//! `version`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::{
    AblationBase, AblationGrid, EvalTask, PipelineConfig, ReplayOutcome, DEFAULT_QUERY_COUNT,
    DEFAULT_TOP_N,
};
use crate::library::{BuildConfig, LibraryManifest, PromptEmbedding, PromptMatrix};
use crate::mips::{SearchHit, Similarity};
use crate::oracle::{OptionProbeResult, SyntheticOracleConfig};
use crate::selection::{CandidateTally, Selection, Strategy, DEFAULT_N_PRIME};
use crate::DOCUMENT_VERSION;

fn version() -> u32 {
    DOCUMENT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLibraryRequest {
    pub embeddings: Vec<PromptEmbedding>,
    /// Candidate training-instance keys per embedding id.
    pub instances: BTreeMap<String, Vec<Vec<f32>>>,
    #[serde(default)]
    pub config: BuildConfig,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySummary {
    pub library_id: String,
    pub manifest: LibraryManifest,
    pub entry_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub queries: Vec<Vec<f32>>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub similarity: Similarity,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<Vec<SearchHit>>,
}

/// Samples queries from `instances`, searches, and tallies the hits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub instances: Vec<Vec<f32>>,
    #[serde(default = "default_query_count")]
    pub query_count: usize,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub similarity: Similarity,
    #[serde(default)]
    pub hard_prompt_id: Option<String>,
}

fn default_query_count() -> usize {
    DEFAULT_QUERY_COUNT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveConfig {
    pub library_id: String,
    pub query_count: usize,
    pub top_n: usize,
    pub seed: u64,
    pub similarity: Similarity,
    pub library: LibraryManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyDocument {
    #[serde(default = "version")]
    pub version: u32,
    #[serde(default)]
    pub hard_prompt_id: Option<String>,
    pub tally: CandidateTally,
    #[serde(default)]
    pub config: Option<RetrieveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRequest {
    pub tally: CandidateTally,
    pub strategy: Strategy,
    #[serde(default = "default_n_prime")]
    pub n_prime: usize,
    /// Option probes for the variance strategies.
    #[serde(default)]
    pub probes: Vec<OptionProbeResult>,
    #[serde(default)]
    pub hard_prompt_id: Option<String>,
    /// When set, the blended prompt matrix is returned too.
    #[serde(default)]
    pub library_id: Option<String>,
}

fn default_n_prime() -> usize {
    DEFAULT_N_PRIME
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub strategy: Strategy,
    pub n_prime: usize,
    pub hard_prompt_id: Option<String>,
    pub library_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDocument {
    #[serde(default = "version")]
    pub version: u32,
    pub selection: Selection,
    /// Tally after scoring (variance strategies fill in `scores`).
    pub tally: CandidateTally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptMatrix>,
    pub config: SelectConfig,
}

/// Where classification records and probes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Synthetic {
        config: SyntheticOracleConfig,
    },
    /// Probe and record tables as JSON lines.
    Table {
        jsonl: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub task: EvalTask,
    pub strategy: Strategy,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub provider: ProviderSpec,
    #[serde(default)]
    pub with_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRequest {
    pub grid: AblationGrid,
    #[serde(default)]
    pub base: AblationBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDocument {
    #[serde(default = "version")]
    pub version: u32,
    pub fixture: String,
    pub outcome: ReplayOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: u32,
    pub libraries: usize,
}

/// Error payload of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable code, e.g. `SPLB_BAD_MAGIC` or `DIMENSION_MISMATCH`.
    pub code: String,
    pub message: String,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Format,
    NotFound,
    Internal,
}

/// Input files produced outside the service (for example by an encoder).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InputFileError {
    #[error("unsupported document version {found} (expected {DOCUMENT_VERSION})")]
    Version { found: u32 },
    #[error("{what} is empty")]
    Empty { what: &'static str },
    #[error("{location}: key has dimension {found}, expected {expected}")]
    KeyDimension {
        location: String,
        expected: usize,
        found: usize,
    },
    #[error("{location}: key contains a non-finite value")]
    NonFinite { location: String },
}

fn check_version(found: u32) -> Result<(), InputFileError> {
    if found == DOCUMENT_VERSION {
        Ok(())
    } else {
        Err(InputFileError::Version { found })
    }
}

fn check_keys<'a>(
    key_dim: usize,
    keys: impl IntoIterator<Item = (String, &'a [f32])>,
) -> Result<(), InputFileError> {
    for (location, key) in keys {
        if key.len() != key_dim {
            return Err(InputFileError::KeyDimension {
                location,
                expected: key_dim,
                found: key.len(),
            });
        }
        if key.iter().any(|v| !v.is_finite()) {
            return Err(InputFileError::NonFinite { location });
        }
    }
    Ok(())
}

/// Candidate training-instance keys per embedding id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    #[serde(default = "version")]
    pub version: u32,
    pub key_dim: usize,
    pub instances: BTreeMap<String, Vec<Vec<f32>>>,
}

impl KeyFile {
    pub fn validate(&self) -> Result<(), InputFileError> {
        check_version(self.version)?;
        if self.instances.is_empty() {
            return Err(InputFileError::Empty { what: "instances" });
        }
        check_keys(
            self.key_dim,
            self.instances.iter().flat_map(|(id, keys)| {
                keys.iter()
                    .enumerate()
                    .map(move |(i, k)| (format!("{id}[{i}]"), k.as_slice()))
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    #[serde(default = "version")]
    pub version: u32,
    pub embeddings: Vec<PromptEmbedding>,
}

impl EmbeddingFile {
    pub fn validate(&self) -> Result<(), InputFileError> {
        check_version(self.version)?;
        if self.embeddings.is_empty() {
            return Err(InputFileError::Empty { what: "embeddings" });
        }
        Ok(())
    }
}

/// Query instances of one hard prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFile {
    #[serde(default = "version")]
    pub version: u32,
    pub key_dim: usize,
    #[serde(default)]
    pub hard_prompt_id: Option<String>,
    pub instances: Vec<Vec<f32>>,
}

impl QueryFile {
    pub fn validate(&self) -> Result<(), InputFileError> {
        check_version(self.version)?;
        if self.instances.is_empty() {
            return Err(InputFileError::Empty { what: "instances" });
        }
        check_keys(
            self.key_dim,
            self.instances
                .iter()
                .enumerate()
                .map(|(i, k)| (format!("instances[{i}]"), k.as_slice())),
        )
    }
}
