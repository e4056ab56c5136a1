//! Prompt embeddings and the key-to-prompt library built from them.

mod format;
mod sampling;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{
    decode_library, encode_library, load_library, manifest_path, save_library, FormatError,
    LibraryManifest, LIBRARY_MAGIC, LIBRARY_VERSION,
};
pub use sampling::{centroid_order, sample_clustering, sample_distributed, sample_random};

/// Soft-prompt length used when nothing else is configured.
pub const DEFAULT_PREFIX_LEN: usize = 100;
/// Instances kept per prompt embedding when nothing else is configured.
pub const DEFAULT_N_PER_PROMPT: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LibraryError {
    #[error("library needs at least one prompt embedding")]
    EmptyEmbeddingSet,
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("key dimension must be at least 1")]
    ZeroKeyDim,
    #[error("duplicate embedding id `{0}`")]
    DuplicateEmbeddingId(String),
    #[error("embedding ids must be strictly ascending, `{previous}` is followed by `{next}`")]
    UnsortedEmbeddings { previous: String, next: String },
    #[error("matrix of `{id}` is {found_rows}x{found_cols}, library expects {rows}x{cols}")]
    MatrixShape {
        id: String,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("matrix of {rows}x{cols} needs {expected} values, got {found}")]
    MatrixLen {
        rows: usize,
        cols: usize,
        expected: usize,
        found: usize,
    },
    #[error("matrix of `{id}` contains a non-finite value")]
    NonFiniteMatrix { id: String },
    #[error("embedding `{embedding_id}` has no training instances")]
    NoInstances { embedding_id: String },
    #[error("instances given for unknown embedding `{embedding_id}`")]
    UnknownEmbedding { embedding_id: String },
    #[error("key of embedding `{embedding_id}` has dimension {found}, expected {expected}")]
    KeyDimension {
        embedding_id: String,
        expected: usize,
        found: usize,
    },
    #[error("key of embedding `{embedding_id}` at instance {index} is not finite")]
    NonFiniteKey { embedding_id: String, index: usize },
    #[error("entry ordinals must be dense: expected {expected}, found {found}")]
    EntryOrdinal { expected: usize, found: usize },
    #[error("entry {ordinal} references embedding #{embedding} but the library holds {count}")]
    DanglingEntry {
        ordinal: usize,
        embedding: usize,
        count: usize,
    },
}

/// Row-major `prefix_len x model_dim` soft prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl PromptMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self, LibraryError> {
        let expected = rows * cols;
        if values.len() != expected {
            return Err(LibraryError::MatrixLen {
                rows,
                cols,
                expected,
                found: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// True when the stored length matches the declared shape. Deserialized
    /// matrices bypass [`PromptMatrix::new`], so the library re-checks this.
    fn is_well_formed(&self) -> bool {
        self.values.len() == self.rows * self.cols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMetadata {
    pub source_dataset: String,
    pub prompt_name: String,
    pub task_cluster: String,
    /// Surface form of the answer options, e.g. `yes/no`. Free tag.
    #[serde(default)]
    pub answer_choice_format: String,
}

/// A trained soft prompt together with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    /// Conventionally `dataset/prompt_name`.
    pub id: String,
    pub metadata: EmbeddingMetadata,
    pub matrix: PromptMatrix,
}

impl PromptEmbedding {
    pub fn new(id: impl Into<String>, metadata: EmbeddingMetadata, matrix: PromptMatrix) -> Self {
        Self {
            id: id.into(),
            metadata,
            matrix,
        }
    }
}

/// One stored training instance: its key vector and the prompt it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub ordinal: usize,
    /// Position of the owning embedding in [`SourcePromptLibrary::embeddings`].
    pub embedding: usize,
    pub key: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    #[default]
    Random,
    Clustering,
    Distributed,
}

impl SamplingMethod {
    pub const ALL: [SamplingMethod; 3] = [Self::Random, Self::Clustering, Self::Distributed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Clustering => "clustering",
            Self::Distributed => "distributed",
        }
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "clustering" => Ok(Self::Clustering),
            "distributed" => Ok(Self::Distributed),
            other => Err(format!(
                "unknown sampling method `{other}` (expected random, clustering or distributed)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_per_prompt: usize,
    pub sampling_method: SamplingMethod,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            n_per_prompt: DEFAULT_N_PER_PROMPT,
            sampling_method: SamplingMethod::Random,
            seed: 0,
        }
    }
}

/// Immutable mapping from training-instance keys to prompt embeddings.
///
/// Embeddings are held in ascending id order; entries are ordered by owning
/// embedding and then by selection order, with dense ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePromptLibrary {
    key_dim: usize,
    prefix_len: usize,
    model_dim: usize,
    embeddings: Vec<PromptEmbedding>,
    entries: Vec<LibraryEntry>,
    build: Option<BuildConfig>,
    provenance: BTreeMap<String, String>,
}

impl SourcePromptLibrary {
    /// Assembles a library from already-sampled parts, checking every invariant.
    pub fn from_parts(
        key_dim: usize,
        prefix_len: usize,
        model_dim: usize,
        embeddings: Vec<PromptEmbedding>,
        entries: Vec<LibraryEntry>,
    ) -> Result<Self, LibraryError> {
        if key_dim == 0 {
            return Err(LibraryError::ZeroKeyDim);
        }
        for pair in embeddings.windows(2) {
            match pair[0].id.cmp(&pair[1].id) {
                std::cmp::Ordering::Less => {}
                std::cmp::Ordering::Equal => {
                    return Err(LibraryError::DuplicateEmbeddingId(pair[0].id.clone()))
                }
                std::cmp::Ordering::Greater => {
                    return Err(LibraryError::UnsortedEmbeddings {
                        previous: pair[0].id.clone(),
                        next: pair[1].id.clone(),
                    })
                }
            }
        }
        for embedding in &embeddings {
            check_matrix(embedding, prefix_len, model_dim)?;
        }
        for (position, entry) in entries.iter().enumerate() {
            if entry.ordinal != position {
                return Err(LibraryError::EntryOrdinal {
                    expected: position,
                    found: entry.ordinal,
                });
            }
            let owner = embeddings
                .get(entry.embedding)
                .ok_or(LibraryError::DanglingEntry {
                    ordinal: entry.ordinal,
                    embedding: entry.embedding,
                    count: embeddings.len(),
                })?;
            check_key(&owner.id, position, &entry.key, key_dim)?;
        }
        Ok(Self {
            key_dim,
            prefix_len,
            model_dim,
            embeddings,
            entries,
            build: None,
            provenance: BTreeMap::new(),
        })
    }

    pub fn with_build_config(mut self, build: BuildConfig) -> Self {
        self.build = Some(build);
        self
    }

    pub fn with_provenance(mut self, provenance: BTreeMap<String, String>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn embeddings(&self) -> &[PromptEmbedding] {
        &self.embeddings
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build_config(&self) -> Option<&BuildConfig> {
        self.build.as_ref()
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn embedding(&self, id: &str) -> Option<&PromptEmbedding> {
        self.embeddings
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.embeddings[i])
    }

    pub fn entry_embedding_id(&self, entry: &LibraryEntry) -> &str {
        &self.embeddings[entry.embedding].id
    }

    /// Number of stored entries per embedding id.
    pub fn entry_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(self.entry_embedding_id(entry)).or_insert(0) += 1;
        }
        counts
    }
}

fn check_matrix(
    embedding: &PromptEmbedding,
    prefix_len: usize,
    model_dim: usize,
) -> Result<(), LibraryError> {
    let m = &embedding.matrix;
    if m.rows != prefix_len || m.cols != model_dim || !m.is_well_formed() {
        return Err(LibraryError::MatrixShape {
            id: embedding.id.clone(),
            rows: prefix_len,
            cols: model_dim,
            found_rows: m.rows,
            found_cols: m.values.len().checked_div(m.rows).unwrap_or(m.cols),
        });
    }
    if !m.is_finite() {
        return Err(LibraryError::NonFiniteMatrix {
            id: embedding.id.clone(),
        });
    }
    Ok(())
}

fn check_key(
    embedding_id: &str,
    index: usize,
    key: &[f32],
    key_dim: usize,
) -> Result<(), LibraryError> {
    if key.len() != key_dim {
        return Err(LibraryError::KeyDimension {
            embedding_id: embedding_id.to_owned(),
            expected: key_dim,
            found: key.len(),
        });
    }
    if key.iter().any(|v| !v.is_finite()) {
        return Err(LibraryError::NonFiniteKey {
            embedding_id: embedding_id.to_owned(),
            index,
        });
    }
    Ok(())
}

/// Picks `indices` out of `keys` according to `method`.
pub fn sample_indices(
    method: SamplingMethod,
    keys: &[Vec<f32>],
    n: usize,
    seed: u64,
) -> Vec<usize> {
    match method {
        SamplingMethod::Random => sample_random(keys.len(), n, seed),
        SamplingMethod::Clustering => sample_clustering(keys, n),
        SamplingMethod::Distributed => sample_distributed(keys, n),
    }
}

/// Builds a library by sampling at most `config.n_per_prompt` instances per
/// embedding.
///
/// Embeddings are sorted by id; each embedding draws from its own seeded
/// stream, so the result only depends on the inputs and `config.seed`.
pub fn build_library(
    mut embeddings: Vec<PromptEmbedding>,
    instances: &BTreeMap<String, Vec<Vec<f32>>>,
    config: &BuildConfig,
) -> Result<SourcePromptLibrary, LibraryError> {
    if embeddings.is_empty() {
        return Err(LibraryError::EmptyEmbeddingSet);
    }
    if config.n_per_prompt == 0 {
        return Err(LibraryError::ZeroSampleSize);
    }
    embeddings.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in embeddings.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(LibraryError::DuplicateEmbeddingId(pair[0].id.clone()));
        }
    }
    if let Some(unknown) = instances
        .keys()
        .find(|id| embeddings.binary_search_by(|e| e.id.cmp(id)).is_err())
    {
        return Err(LibraryError::UnknownEmbedding {
            embedding_id: unknown.clone(),
        });
    }

    let prefix_len = embeddings[0].matrix.rows;
    let model_dim = embeddings[0].matrix.cols;
    let mut key_dim = None;
    for embedding in &embeddings {
        check_matrix(embedding, prefix_len, model_dim)?;
        let keys = match instances.get(&embedding.id) {
            Some(keys) if !keys.is_empty() => keys,
            _ => {
                return Err(LibraryError::NoInstances {
                    embedding_id: embedding.id.clone(),
                })
            }
        };
        let dim = *key_dim.get_or_insert(keys[0].len());
        if dim == 0 {
            return Err(LibraryError::ZeroKeyDim);
        }
        for (index, key) in keys.iter().enumerate() {
            check_key(&embedding.id, index, key, dim)?;
        }
    }
    let key_dim = key_dim.expect("at least one embedding was checked");

    let mut entries = Vec::new();
    for (position, embedding) in embeddings.iter().enumerate() {
        let keys = &instances[&embedding.id];
        let seed = crate::seeding::derive_seed(config.seed, &["library", &embedding.id]);
        for index in sample_indices(config.sampling_method, keys, config.n_per_prompt, seed) {
            entries.push(LibraryEntry {
                ordinal: entries.len(),
                embedding: position,
                key: keys[index].clone(),
            });
        }
    }

    Ok(
        SourcePromptLibrary::from_parts(key_dim, prefix_len, model_dim, embeddings, entries)?
            .with_build_config(*config),
    )
}
