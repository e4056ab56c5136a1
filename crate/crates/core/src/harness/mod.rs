//! End-to-end evaluation: query sampling, retrieval, selection, rank
//! classification and mean/std reporting.

mod ablation;
mod fixtures;
mod world;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{sample_random, BuildConfig, LibraryError, SourcePromptLibrary};
use crate::mips::{MipsIndex, SearchError, Similarity};
use crate::oracle::{classify_accuracy, LmOracle, OracleError};
use crate::seeding::derive_seed;
use crate::selection::{
    aggregate_frequency, select, CandidateTally, Selection, SelectionError, SelectionResult,
    Strategy, WeightedId, DEFAULT_N_PRIME,
};
use crate::DOCUMENT_VERSION;

pub use ablation::{
    run_ablation, run_cell, write_ablation_csv, AblationAxis, AblationBase, AblationGrid,
    AblationRow, AblationTable, AxisValue, CellSummary,
};
pub use fixtures::{
    builtin_fixture, replay_fixture, ColumnReplay, FixturePrompt, ReplayFixture, ReplayOutcome,
    ReplayedPrompt, ReportedAverages, TableOneFixture, TableOneRow, BUILTIN_FIXTURES,
    FIXTURE_TOLERANCE,
};
pub use world::{SyntheticWorld, WorldSpec};

/// Query instances sampled per hard prompt when nothing else is configured.
pub const DEFAULT_QUERY_COUNT: usize = 32;
/// Hits retrieved per query when nothing else is configured.
pub const DEFAULT_TOP_N: usize = 10;
/// Number of sampling seeds averaged in randomized reports.
pub const DEFAULT_SEED_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("library stage: {0}")]
    Library(#[from] LibraryError),
    #[error("retrieval stage: {0}")]
    Retrieval(#[from] SearchError),
    #[error("selection stage: {0}")]
    Selection(#[from] SelectionError),
    #[error("classification stage: {0}")]
    Oracle(#[from] OracleError),
    #[error("task `{0}` has no hard prompts")]
    NoHardPrompts(String),
    #[error("hard prompt `{0}` has no instances")]
    EmptyPrompt(String),
    #[error("hard prompt `{prompt}` instance {index} has dimension {found}, library keys have {expected}")]
    TaskKeyDimension {
        prompt: String,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("query count must be at least 1")]
    ZeroQueryCount,
    #[error("no accuracies to aggregate")]
    NoAccuracies,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("unknown ablation axis `{0}`")]
    UnknownAxis(String),
    #[error("invalid value {value} for ablation axis `{axis}`: {reason}")]
    InvalidAxisValue {
        axis: String,
        value: String,
        reason: String,
    },
    #[error("invalid synthetic world: {0}")]
    InvalidWorld(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("csv output: {0}")]
    Csv(String),
}

/// Instances of the target task wrapped in one hard prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardPromptInstances {
    pub id: String,
    pub keys: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task_id: String,
    pub option_count: usize,
    pub prompts: Vec<HardPromptInstances>,
}

impl EvalTask {
    pub fn validate(&self, key_dim: usize) -> Result<(), HarnessError> {
        if self.prompts.is_empty() {
            return Err(HarnessError::NoHardPrompts(self.task_id.clone()));
        }
        for prompt in &self.prompts {
            if prompt.keys.is_empty() {
                return Err(HarnessError::EmptyPrompt(prompt.id.clone()));
            }
            if let Some((index, key)) = prompt
                .keys
                .iter()
                .enumerate()
                .find(|(_, k)| k.len() != key_dim)
            {
                return Err(HarnessError::TaskKeyDimension {
                    prompt: prompt.id.clone(),
                    index,
                    expected: key_dim,
                    found: key.len(),
                });
            }
        }
        Ok(())
    }

    pub fn hard_prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.iter().map(|p| p.id.as_str())
    }
}

fn default_query_count() -> usize {
    DEFAULT_QUERY_COUNT
}
fn default_top_n() -> usize {
    DEFAULT_TOP_N
}
fn default_n_prime() -> usize {
    DEFAULT_N_PRIME
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_query_count")]
    pub query_count: usize,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_n_prime")]
    pub n_prime: usize,
    #[serde(default)]
    pub similarity: Similarity,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            query_count: DEFAULT_QUERY_COUNT,
            top_n: DEFAULT_TOP_N,
            n_prime: DEFAULT_N_PRIME,
            similarity: Similarity::InnerProduct,
        }
    }
}

/// `min(q, len)` distinct keys, uniformly chosen.
///
/// The draw is a prefix of one seeded permutation, so for a fixed seed the
/// queries for a smaller `q` are a subset of those for a larger one.
pub fn sample_queries(
    keys: &[Vec<f32>],
    q: usize,
    seed: u64,
) -> Result<Vec<Vec<f32>>, HarnessError> {
    if keys.is_empty() {
        return Err(HarnessError::EmptyPrompt(String::new()));
    }
    if q == 0 {
        return Err(HarnessError::ZeroQueryCount);
    }
    Ok(sample_random(keys.len(), keys.len(), seed)
        .into_iter()
        .take(q)
        .map(|i| keys[i].clone())
        .collect())
}

/// Everything produced for one hard prompt by one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptOutcome {
    pub hard_prompt_id: String,
    pub tally: CandidateTally,
    pub result: SelectionResult,
    pub accuracy: f64,
}

/// Retrieval and selection for one hard prompt, without classification.
pub fn select_for_prompt(
    index: &MipsIndex,
    prompt: &HardPromptInstances,
    strategy: Strategy,
    config: &PipelineConfig,
    seed: u64,
    oracle: &dyn LmOracle,
) -> Result<(CandidateTally, Selection), HarnessError> {
    let query_seed = derive_seed(seed, &["queries", &prompt.id]);
    let queries =
        sample_queries(&prompt.keys, config.query_count, query_seed).map_err(|e| match e {
            HarnessError::EmptyPrompt(_) => HarnessError::EmptyPrompt(prompt.id.clone()),
            other => other,
        })?;
    let hits = index.batch_search(&queries, config.top_n)?;
    let mut tally = aggregate_frequency(&hits);
    let selection = select(
        strategy,
        &mut tally,
        config.n_prime,
        Some(oracle),
        &prompt.id,
    )?;
    Ok((tally, selection))
}

fn selection_accuracy(
    oracle: &dyn LmOracle,
    hard_prompt_id: &str,
    selection: &Selection,
) -> Result<f64, HarnessError> {
    let records = oracle.classification_records(hard_prompt_id, selection)?;
    Ok(classify_accuracy(&records)?)
}

/// Runs the full pipeline for every hard prompt of `task`.
pub fn run_pipeline(
    task: &EvalTask,
    library: &SourcePromptLibrary,
    index: &MipsIndex,
    strategy: Strategy,
    config: &PipelineConfig,
    seed: u64,
    oracle: &dyn LmOracle,
) -> Result<Vec<PromptOutcome>, HarnessError> {
    task.validate(library.key_dim())?;
    task.prompts
        .iter()
        .map(|prompt| {
            let (tally, selection) =
                select_for_prompt(index, prompt, strategy, config, seed, oracle)?;
            let accuracy = selection_accuracy(oracle, &prompt.id, &selection)?;
            let result = selection.materialize(library)?;
            Ok(PromptOutcome {
                hard_prompt_id: prompt.id.clone(),
                tally,
                result,
                accuracy,
            })
        })
        .collect()
}

/// Evaluates every candidate alone and keeps the most accurate one
/// (ties by id). This is the retrieval upper bound.
pub fn oracle_selection(
    hard_prompt_id: &str,
    candidates: &[String],
    oracle: &dyn LmOracle,
) -> Result<(String, f64), HarnessError> {
    let mut sorted: Vec<&String> = candidates.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut best: Option<(String, f64)> = None;
    for id in sorted {
        let selection = Selection {
            strategy: Strategy::Frequency,
            chosen: vec![WeightedId {
                id: id.clone(),
                weight: 1.0,
            }],
        };
        let acc = selection_accuracy(oracle, hard_prompt_id, &selection)?;
        if best.as_ref().is_none_or(|(_, b)| acc > *b) {
            best = Some((id.clone(), acc));
        }
    }
    best.ok_or(HarnessError::NoCandidates)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate_report(accuracies: &[f64]) -> Result<(f64, f64), HarnessError> {
    if accuracies.is_empty() {
        return Err(HarnessError::NoAccuracies);
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let variance = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, variance.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptReport {
    /// Mean accuracy over seeds.
    pub accuracy: f64,
    pub strategy: Strategy,
    /// Selected embeddings and weights, one entry per seed.
    pub selections: Vec<Vec<WeightedId>>,
    /// Mean over seeds of the best single-candidate accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub strategy: Strategy,
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub key_dim: usize,
    pub library_entries: usize,
    pub library_embeddings: usize,
    pub library_build: Option<BuildConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub task_id: String,
    pub strategy: Strategy,
    pub per_prompt: BTreeMap<String, PromptReport>,
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_mean: Option<f64>,
    pub seeds: Vec<u64>,
    pub config: ConfigSnapshot,
}

impl EvalReport {
    /// Mean and std recomputed from `per_prompt`.
    pub fn recompute(&self) -> Result<(f64, f64), HarnessError> {
        let accs: Vec<f64> = self.per_prompt.values().map(|p| p.accuracy).collect();
        aggregate_report(&accs)
    }
}

/// `seeds` as `0..count`, matching the default three-run average.
pub fn default_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).collect()
}

/// Runs the pipeline once per seed and averages per-prompt accuracies.
///
/// With `with_oracle`, every seed also evaluates all retrieved candidates
/// individually and records the best one.
pub fn evaluate(
    task: &EvalTask,
    library: &SourcePromptLibrary,
    strategy: Strategy,
    config: &PipelineConfig,
    seeds: &[u64],
    oracle: &dyn LmOracle,
    with_oracle: bool,
) -> Result<EvalReport, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    task.validate(library.key_dim())?;
    let index = MipsIndex::build_with(library, config.similarity)?;
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let outcomes = run_pipeline(task, library, &index, strategy, config, seed, oracle)?;
            let oracles = if with_oracle {
                outcomes
                    .iter()
                    .map(|o| {
                        let ids: Vec<String> = o.tally.counts.keys().cloned().collect();
                        oracle_selection(&o.hard_prompt_id, &ids, oracle).map(Some)
                    })
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                vec![None; outcomes.len()]
            };
            Ok((outcomes, oracles))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let seed_count = seeds.len() as f64;
    let mut per_prompt = BTreeMap::new();
    for (p, prompt) in task.prompts.iter().enumerate() {
        let accuracy = runs.iter().map(|(o, _)| o[p].accuracy).sum::<f64>() / seed_count;
        let selections = runs
            .iter()
            .map(|(o, _)| o[p].result.selection.chosen.clone())
            .collect();
        let (oracle_accuracy, oracle_ids) = if with_oracle {
            let picks: Vec<&(String, f64)> = runs
                .iter()
                .map(|(_, b)| b[p].as_ref().expect("oracle ran"))
                .collect();
            (
                Some(picks.iter().map(|(_, a)| a).sum::<f64>() / seed_count),
                Some(picks.iter().map(|(id, _)| id.clone()).collect()),
            )
        } else {
            (None, None)
        };
        per_prompt.insert(
            prompt.id.clone(),
            PromptReport {
                accuracy,
                strategy,
                selections,
                oracle_accuracy,
                oracle_ids,
            },
        );
    }
    let accs: Vec<f64> = per_prompt
        .values()
        .map(|p: &PromptReport| p.accuracy)
        .collect();
    let (mean, std) = aggregate_report(&accs)?;
    let oracle_mean = if with_oracle {
        let oracle_accs: Vec<f64> = per_prompt
            .values()
            .filter_map(|p: &PromptReport| p.oracle_accuracy)
            .collect();
        Some(aggregate_report(&oracle_accs)?.0)
    } else {
        None
    };
    Ok(EvalReport {
        version: DOCUMENT_VERSION,
        task_id: task.task_id.clone(),
        strategy,
        per_prompt,
        mean,
        std,
        oracle_mean,
        seeds: seeds.to_vec(),
        config: ConfigSnapshot {
            strategy,
            pipeline: *config,
            seeds: seeds.to_vec(),
            key_dim: library.key_dim(),
            library_entries: library.len(),
            library_embeddings: library.embeddings().len(),
            library_build: library.build_config().copied(),
        },
    })
}

/// Per-task mean/std plus their macro averages across tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    pub per_task: BTreeMap<String, (f64, f64)>,
    pub macro_mean: f64,
    pub macro_std: f64,
}

pub fn macro_summary(reports: &[EvalReport]) -> Result<MacroSummary, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::NoAccuracies);
    }
    let per_task: BTreeMap<String, (f64, f64)> = reports
        .iter()
        .map(|r| (r.task_id.clone(), (r.mean, r.std)))
        .collect();
    let n = per_task.len() as f64;
    Ok(MacroSummary {
        macro_mean: per_task.values().map(|(m, _)| m).sum::<f64>() / n,
        macro_std: per_task.values().map(|(_, s)| s).sum::<f64>() / n,
        per_task,
    })
}
