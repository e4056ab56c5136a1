//! Reducing Q x N retrieved hits to one target soft prompt.
//!
//! Every ranking breaks ties by ascending embedding id, so all strategies are
//! deterministic functions of the tally (and, for the variance strategies, of
//! the option probabilities reported by the probe).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{LibraryError, PromptMatrix, SourcePromptLibrary};
use crate::mips::SearchHit;
use crate::oracle::{OptionProbe, OracleError};

/// Number of candidates blended by the interpolation strategies by default.
pub const DEFAULT_N_PRIME: usize = 3;
/// Lower bound on the option-probability variance in the ranking score.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Allowed deviation of a probability vector's sum from 1.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("candidate tally is empty")]
    EmptyTally,
    #[error("n_prime must be at least 1")]
    ZeroNPrime,
    #[error("frequency must be positive")]
    ZeroFrequency,
    #[error("option probabilities are empty")]
    NoOptions,
    #[error("option probability {index} is {value}, expected a finite non-negative value")]
    InvalidProbability { index: usize, value: f64 },
    #[error("option probabilities sum to {sum}, expected 1 within {PROBABILITY_TOLERANCE}")]
    NotNormalized { sum: f64 },
    #[error("no variance score for candidate `{0}`")]
    MissingScore(String),
    #[error("probe failed for candidate `{id}`: {source}")]
    Probe {
        id: String,
        #[source]
        source: OracleError,
    },
    #[error("strategy {0} needs an option probe")]
    ProbeRequired(Strategy),
    #[error("selected embedding `{0}` is not in the library")]
    UnknownEmbedding(String),
    #[error("blend failed: {0}")]
    Blend(#[from] LibraryError),
}

/// Per-embedding retrieval frequencies, optionally with variance scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateTally {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    /// Floored option variances behind `scores`, kept so score-proportional
    /// weights can be formed from count shares.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<BTreeMap<String, f64>>,
}

impl CandidateTally {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut tally = Self::default();
        for (id, count) in counts {
            if count == 0 {
                continue;
            }
            *tally.counts.entry(id.into()).or_insert(0) += count;
            tally.total += count;
        }
        tally
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Candidates by (count desc, id asc).
    pub fn by_frequency(&self) -> Vec<(&str, u64)> {
        let mut ranked: Vec<(&str, u64)> = self
            .counts
            .iter()
            .map(|(id, &c)| (id.as_str(), c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked
    }

    /// Candidates by (score desc, id asc). Fails if any candidate is unscored.
    pub fn by_score(&self) -> Result<Vec<(&str, f64)>, SelectionError> {
        let scores = self.scores.as_ref();
        let mut ranked = self
            .counts
            .keys()
            .map(|id| {
                scores
                    .and_then(|s| s.get(id))
                    .map(|&score| (id.as_str(), score))
                    .ok_or_else(|| SelectionError::MissingScore(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(ranked)
    }

    /// Multiplies every count by `factor` and drops any scores.
    pub fn scaled(&self, factor: u64) -> Self {
        Self::from_counts(self.counts.iter().map(|(id, &c)| (id.clone(), c * factor)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "freq")]
    Frequency,
    #[serde(rename = "inter")]
    Interpolation,
    #[serde(rename = "var")]
    Variance,
    #[serde(rename = "var-inter")]
    VarianceInterpolation,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::Frequency,
        Self::Interpolation,
        Self::Variance,
        Self::VarianceInterpolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Frequency => "freq",
            Self::Interpolation => "inter",
            Self::Variance => "var",
            Self::VarianceInterpolation => "var-inter",
        }
    }

    pub fn needs_probe(self) -> bool {
        matches!(self, Self::Variance | Self::VarianceInterpolation)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "freq" | "frequency" => Ok(Self::Frequency),
            "inter" | "interpolation" => Ok(Self::Interpolation),
            "var" | "variance" => Ok(Self::Variance),
            "var-inter" | "variance-interpolation" => Ok(Self::VarianceInterpolation),
            other => Err(format!(
                "unknown strategy `{other}` (expected freq, inter, var or var-inter)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedId {
    pub id: String,
    pub weight: f64,
}

/// Which embeddings make up the target prompt, and with what weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub strategy: Strategy,
    pub chosen: Vec<WeightedId>,
}

impl Selection {
    fn weighted<'a>(strategy: Strategy, ranked: impl Iterator<Item = (&'a str, f64)>) -> Self {
        let ranked: Vec<(&str, f64)> = ranked.collect();
        let total: f64 = ranked.iter().map(|(_, w)| w).sum();
        Self {
            strategy,
            chosen: ranked
                .into_iter()
                .map(|(id, w)| WeightedId {
                    id: id.to_owned(),
                    weight: w / total,
                })
                .collect(),
        }
    }

    /// Highest-weighted embedding id.
    pub fn primary_id(&self) -> &str {
        &self.chosen[0].id
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.chosen.iter().map(|c| c.id.as_str())
    }

    pub fn weight_sum(&self) -> f64 {
        self.chosen.iter().map(|c| c.weight).sum()
    }

    /// Canonical label: the id for single-prompt selections, otherwise
    /// `id=weight` pairs joined by `+`.
    pub fn label(&self) -> String {
        if let [only] = self.chosen.as_slice() {
            return only.id.clone();
        }
        self.chosen
            .iter()
            .map(|c| format!("{}={}", c.id, c.weight))
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Elementwise weighted sum of the chosen prompt matrices.
    pub fn blend(&self, library: &SourcePromptLibrary) -> Result<PromptMatrix, SelectionError> {
        let matrices = self
            .chosen
            .iter()
            .map(|c| {
                library
                    .embedding(&c.id)
                    .map(|e| (&e.matrix, c.weight))
                    .ok_or_else(|| SelectionError::UnknownEmbedding(c.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = (library.prefix_len(), library.model_dim());
        let mut acc = vec![0.0f64; rows * cols];
        for (matrix, weight) in &matrices {
            for (a, &v) in acc.iter_mut().zip(matrix.values()) {
                *a += weight * f64::from(v);
            }
        }
        Ok(PromptMatrix::new(
            rows,
            cols,
            acc.into_iter().map(|v| v as f32).collect(),
        )?)
    }

    pub fn materialize(
        self,
        library: &SourcePromptLibrary,
    ) -> Result<SelectionResult, SelectionError> {
        let prompt = self.blend(library)?;
        Ok(SelectionResult {
            selection: self,
            prompt,
        })
    }
}

/// A selection together with the prompt matrix to prepend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selection: Selection,
    pub prompt: PromptMatrix,
}

/// Counts embedding ids over all hits of all queries.
pub fn aggregate_frequency(hit_lists: &[Vec<SearchHit>]) -> CandidateTally {
    CandidateTally::from_counts(
        hit_lists
            .iter()
            .flatten()
            .map(|hit| (hit.embedding_id.as_str(), 1)),
    )
}

/// The single most frequently retrieved embedding.
pub fn select_top_frequency(tally: &CandidateTally) -> Result<Selection, SelectionError> {
    interpolate(tally, 1).map(|s| Selection {
        strategy: Strategy::Frequency,
        ..s
    })
}

/// Frequency-proportional weights over the top `n_prime` candidates.
pub fn interpolate(tally: &CandidateTally, n_prime: usize) -> Result<Selection, SelectionError> {
    if n_prime == 0 {
        return Err(SelectionError::ZeroNPrime);
    }
    if tally.is_empty() {
        return Err(SelectionError::EmptyTally);
    }
    let ranked = tally.by_frequency();
    Ok(Selection::weighted(
        Strategy::Interpolation,
        ranked
            .into_iter()
            .take(n_prime)
            .map(|(id, c)| (id, c as f64)),
    ))
}

/// Population variance of a probability vector.
pub fn population_variance(probs: &[f64]) -> f64 {
    let k = probs.len() as f64;
    let mean = probs.iter().sum::<f64>() / k;
    probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / k
}

/// `freq / sqrt(max(Var(probs), VARIANCE_FLOOR))`.
///
/// Lower variance over the answer options means the prompt is less biased
/// toward any option before seeing the input, which ranks it higher.
pub fn variance_score(freq: u64, probs: &[f64]) -> Result<f64, SelectionError> {
    if freq == 0 {
        return Err(SelectionError::ZeroFrequency);
    }
    if probs.is_empty() {
        return Err(SelectionError::NoOptions);
    }
    if let Some((index, &value)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(SelectionError::InvalidProbability { index, value });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(SelectionError::NotNormalized { sum });
    }
    let variance = population_variance(probs).max(VARIANCE_FLOOR);
    Ok(freq as f64 / variance.sqrt())
}

/// Probes every candidate under `hard_prompt_id` and stores its variance
/// score in the tally.
pub fn score_candidates(
    tally: &mut CandidateTally,
    probe: &dyn OptionProbe,
    hard_prompt_id: &str,
) -> Result<(), SelectionError> {
    let mut scores = BTreeMap::new();
    let mut variances = BTreeMap::new();
    for (id, &count) in &tally.counts {
        let probed =
            probe
                .probe_options(id, hard_prompt_id)
                .map_err(|source| SelectionError::Probe {
                    id: id.clone(),
                    source,
                })?;
        let score =
            variance_score(count, &probed.option_probs).map_err(|e| SelectionError::Probe {
                id: id.clone(),
                source: OracleError::InvalidProbe(e.to_string()),
            })?;
        scores.insert(id.clone(), score);
        variances.insert(
            id.clone(),
            population_variance(&probed.option_probs).max(VARIANCE_FLOOR),
        );
    }
    tally.scores = Some(scores);
    tally.variances = Some(variances);
    Ok(())
}

/// Scores the candidates and keeps the best one.
pub fn select_variance(
    tally: &mut CandidateTally,
    probe: &dyn OptionProbe,
    hard_prompt_id: &str,
) -> Result<Selection, SelectionError> {
    if tally.is_empty() {
        return Err(SelectionError::EmptyTally);
    }
    score_candidates(tally, probe, hard_prompt_id)?;
    interpolate_by_score(tally, 1).map(|s| Selection {
        strategy: Strategy::Variance,
        ..s
    })
}

/// Score-proportional weights over the top `n_prime` scored candidates.
pub fn interpolate_by_score(
    tally: &CandidateTally,
    n_prime: usize,
) -> Result<Selection, SelectionError> {
    if n_prime == 0 {
        return Err(SelectionError::ZeroNPrime);
    }
    if tally.is_empty() {
        return Err(SelectionError::EmptyTally);
    }
    let ranked: Vec<(&str, f64)> = tally.by_score()?.into_iter().take(n_prime).collect();
    // With variances on hand, weigh by `(count / total) / sd`, which is the
    // score divided by `total`. Count shares do not change when every count is
    // scaled, so neither do the weights.
    let shares: Option<Vec<(&str, f64)>> = tally.variances.as_ref().and_then(|variances| {
        let total = tally.total as f64;
        ranked
            .iter()
            .map(|&(id, _)| {
                let count = *tally.counts.get(id)?;
                let v = *variances.get(id)?;
                Some((id, count as f64 / total / v.sqrt()))
            })
            .collect()
    });
    Ok(Selection::weighted(
        Strategy::VarianceInterpolation,
        shares.unwrap_or(ranked).into_iter(),
    ))
}

/// Dispatches to the strategy's selection function.
pub fn select(
    strategy: Strategy,
    tally: &mut CandidateTally,
    n_prime: usize,
    probe: Option<&dyn OptionProbe>,
    hard_prompt_id: &str,
) -> Result<Selection, SelectionError> {
    match strategy {
        Strategy::Frequency => select_top_frequency(tally),
        Strategy::Interpolation => interpolate(tally, n_prime),
        Strategy::Variance | Strategy::VarianceInterpolation => {
            let probe = probe.ok_or(SelectionError::ProbeRequired(strategy))?;
            if strategy == Strategy::Variance {
                select_variance(tally, probe, hard_prompt_id)
            } else {
                if tally.is_empty() {
                    return Err(SelectionError::EmptyTally);
                }
                score_candidates(tally, probe, hard_prompt_id)?;
                interpolate_by_score(tally, n_prime)
            }
        }
    }
}
