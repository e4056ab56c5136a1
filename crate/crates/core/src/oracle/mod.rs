//! Backbone language-model abstraction.
//!
//! The harness never runs a transformer. It asks an [`LmOracle`] for two
//! things: option probabilities of a soft prompt concatenated with a hard
//! prompt (no input instance), and per-instance option log-likelihoods under a
//! selected prompt for rank classification.

mod synthetic;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selection::Selection;

pub use synthetic::{ProbeMode, SyntheticOracle, SyntheticOracleConfig};
pub use table::{parse_table, write_table_line, TableLine, TableOracle, TableRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unknown embedding `{0}`")]
    UnknownEmbedding(String),
    #[error("no option probe for embedding `{embedding_id}` under hard prompt `{hard_prompt_id}`")]
    MissingProbe {
        embedding_id: String,
        hard_prompt_id: String,
    },
    #[error(
        "no classification records for prompt `{prompt}` under hard prompt `{hard_prompt_id}`"
    )]
    MissingRecords {
        prompt: String,
        hard_prompt_id: String,
    },
    #[error("option scores cannot be normalized: {0}")]
    NotNormalizable(String),
    #[error("invalid option probe: {0}")]
    InvalidProbe(String),
    #[error("invalid classification record `{instance_id}`: {reason}")]
    InvalidRecord { instance_id: String, reason: String },
    #[error("{records} records but {predictions} predictions")]
    LengthMismatch { records: usize, predictions: usize },
    #[error("no records to score")]
    NoRecords,
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// Option distribution of `embedding_id` concatenated with `hard_prompt_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionProbeResult {
    pub embedding_id: String,
    pub hard_prompt_id: String,
    pub option_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankClassificationRecord {
    pub instance_id: String,
    pub option_loglikelihoods: Vec<f64>,
    pub gold_index: usize,
}

impl RankClassificationRecord {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |reason: &str| OracleError::InvalidRecord {
            instance_id: self.instance_id.clone(),
            reason: reason.to_owned(),
        };
        if self.option_loglikelihoods.len() < 2 {
            return Err(bad("needs at least two options"));
        }
        if self.gold_index >= self.option_loglikelihoods.len() {
            return Err(bad("gold index out of range"));
        }
        if self.option_loglikelihoods.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite log-likelihood"));
        }
        Ok(())
    }
}

/// Source of option probabilities for variance-based ranking.
pub trait OptionProbe: Send + Sync {
    fn probe_options(
        &self,
        embedding_id: &str,
        hard_prompt_id: &str,
    ) -> Result<OptionProbeResult, OracleError>;
}

/// Full backbone: probes plus rank-classification records under a selection.
pub trait LmOracle: OptionProbe {
    fn classification_records(
        &self,
        hard_prompt_id: &str,
        selection: &Selection,
    ) -> Result<Vec<RankClassificationRecord>, OracleError>;
}

/// Turns per-option log-likelihoods into a distribution by exponentiating and
/// normalizing (shifted by the maximum for stability).
pub fn normalize_loglikelihoods(scores: &[f64]) -> Result<Vec<f64>, OracleError> {
    if scores.is_empty() {
        return Err(OracleError::NotNormalizable("no options".into()));
    }
    if scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(OracleError::NotNormalizable(
            "NaN or +inf log-likelihood".into(),
        ));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(OracleError::NotNormalizable(
            "every log-likelihood is -inf".into(),
        ));
    }
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// Index of the highest log-likelihood; ties go to the lowest index.
pub fn rank_classify(record: &RankClassificationRecord) -> usize {
    let mut best = 0;
    for (i, &ll) in record.option_loglikelihoods.iter().enumerate().skip(1) {
        if ll > record.option_loglikelihoods[best] {
            best = i;
        }
    }
    best
}

/// Fraction of predictions equal to the gold index.
pub fn accuracy(
    records: &[RankClassificationRecord],
    predictions: &[usize],
) -> Result<f64, OracleError> {
    if records.len() != predictions.len() {
        return Err(OracleError::LengthMismatch {
            records: records.len(),
            predictions: predictions.len(),
        });
    }
    if records.is_empty() {
        return Err(OracleError::NoRecords);
    }
    let correct = records
        .iter()
        .zip(predictions)
        .filter(|(r, &p)| r.gold_index == p)
        .count();
    Ok(correct as f64 / records.len() as f64)
}

/// Rank-classifies every record and returns the accuracy.
pub fn classify_accuracy(records: &[RankClassificationRecord]) -> Result<f64, OracleError> {
    for record in records {
        record.validate()?;
    }
    let predictions: Vec<usize> = records.iter().map(rank_classify).collect();
    accuracy(records, &predictions)
}
