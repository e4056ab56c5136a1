//! Source prompt library for zero-shot soft-prompt retrieval.
//!
//! Training-instance keys are stored next to the soft prompt that was tuned on
//! them. At evaluation time a handful of target-task instances are used as
//! queries, the nearest keys are found by exact maximum inner-product search,
//! and the retrieved prompts are reduced to one target prompt by frequency,
//! interpolation or variance-based ranking.
//!
//! Module map:
//!
//! - [`library`]: prompt embeddings, library construction, instance sampling
//!   and the `SPLB` binary format.
//! - [`mips`]: exact top-N inner-product search.
//! - [`selection`]: candidate tallies and the four selection strategies.
//! - [`oracle`]: the language-model abstraction (option probes and rank
//!   classification) with synthetic and table-backed providers.
//! - [`harness`]: the end-to-end pipeline, reporting, the planted-optimum
//!   synthetic world, ablation grids and fixture replay.
//! - [`api`]: JSON request and response bodies shared by the server and client.

pub mod api;
pub mod harness;
pub mod library;
pub mod mips;
pub mod oracle;
pub mod selection;

mod seeding;

pub use harness::{EvalReport, EvalTask, HarnessError, PipelineConfig};
pub use library::{
    BuildConfig, EmbeddingMetadata, LibraryEntry, LibraryError, PromptEmbedding, PromptMatrix,
    SamplingMethod, SourcePromptLibrary,
};
pub use mips::{MipsIndex, SearchError, SearchHit, Similarity};
pub use oracle::{LmOracle, OptionProbe, OptionProbeResult, OracleError, RankClassificationRecord};
pub use selection::{CandidateTally, Selection, SelectionError, SelectionResult, Strategy};

/// Version stamped into every JSON document this crate emits.
pub const DOCUMENT_VERSION: u32 = 1;
