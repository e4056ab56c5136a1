//! Deterministic stand-in for the backbone LM.
//!
//! Each embedding carries an affinity in `[0, 1]`: the fraction of instances it
//! classifies correctly. A blend behaves like the weighted mean of its parts.
//! Instance `j` of a hard prompt is answered correctly iff its fixed uniform
//! draw `u_j` falls below the effective affinity, so accuracy is monotone in
//! affinity and every candidate is judged against the same draws.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    normalize_loglikelihoods, LmOracle, OptionProbe, OptionProbeResult, OracleError,
    RankClassificationRecord,
};
use crate::seeding::rng_for;
use crate::selection::Selection;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// Every probe returns `1/k` for each of the `k` options.
    Uniform,
    /// Seeded log-scores whose spread shrinks as affinity grows, so better
    /// embeddings look less biased without an input.
    #[default]
    Seeded,
}

fn default_option_count() -> usize {
    2
}

fn default_instances() -> usize {
    200
}

fn default_probe_spread() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleConfig {
    pub seed: u64,
    #[serde(default = "default_option_count")]
    pub option_count: usize,
    #[serde(default = "default_instances")]
    pub instances_per_prompt: usize,
    /// Per-embedding accuracy target.
    #[serde(default)]
    pub affinities: BTreeMap<String, f64>,
    /// Affinity of embeddings missing from `affinities`; unknown ids are
    /// rejected when this is `None`.
    #[serde(default)]
    pub default_affinity: Option<f64>,
    #[serde(default)]
    pub probe_mode: ProbeMode,
    #[serde(default = "default_probe_spread")]
    pub probe_spread: f64,
}

impl SyntheticOracleConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            option_count: default_option_count(),
            instances_per_prompt: default_instances(),
            affinities: BTreeMap::new(),
            default_affinity: None,
            probe_mode: ProbeMode::default(),
            probe_spread: default_probe_spread(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    config: SyntheticOracleConfig,
}

impl SyntheticOracle {
    pub fn new(config: SyntheticOracleConfig) -> Result<Self, OracleError> {
        if config.option_count < 2 {
            return Err(OracleError::InvalidConfig(
                "option_count must be at least 2".into(),
            ));
        }
        if config.instances_per_prompt == 0 {
            return Err(OracleError::InvalidConfig(
                "instances_per_prompt must be at least 1".into(),
            ));
        }
        let in_range = |a: f64| (0.0..=1.0).contains(&a);
        if let Some((id, a)) = config.affinities.iter().find(|(_, a)| !in_range(**a)) {
            return Err(OracleError::InvalidConfig(format!(
                "affinity of `{id}` is {a}, expected [0, 1]"
            )));
        }
        if config.default_affinity.is_some_and(|a| !in_range(a)) {
            return Err(OracleError::InvalidConfig(
                "default_affinity must be in [0, 1]".into(),
            ));
        }
        if !(config.probe_spread.is_finite() && config.probe_spread >= 0.0) {
            return Err(OracleError::InvalidConfig(
                "probe_spread must be finite and non-negative".into(),
            ));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &SyntheticOracleConfig {
        &self.config
    }

    pub fn affinity(&self, embedding_id: &str) -> Result<f64, OracleError> {
        self.config
            .affinities
            .get(embedding_id)
            .copied()
            .or(self.config.default_affinity)
            .ok_or_else(|| OracleError::UnknownEmbedding(embedding_id.to_owned()))
    }

    /// Weighted mean affinity of the selection's embeddings.
    pub fn effective_affinity(&self, selection: &Selection) -> Result<f64, OracleError> {
        let mut total = 0.0;
        for c in &selection.chosen {
            total += c.weight * self.affinity(&c.id)?;
        }
        Ok(total.clamp(0.0, 1.0))
    }
}

impl OptionProbe for SyntheticOracle {
    fn probe_options(
        &self,
        embedding_id: &str,
        hard_prompt_id: &str,
    ) -> Result<OptionProbeResult, OracleError> {
        let affinity = self.affinity(embedding_id)?;
        let k = self.config.option_count;
        let option_probs = match self.config.probe_mode {
            ProbeMode::Uniform => vec![1.0 / k as f64; k],
            ProbeMode::Seeded => {
                let mut rng = rng_for(self.config.seed, &["probe", embedding_id, hard_prompt_id]);
                let spread = self.config.probe_spread * (1.0 - affinity);
                let scores: Vec<f64> = (0..k)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalize_loglikelihoods(&scores)?
            }
        };
        Ok(OptionProbeResult {
            embedding_id: embedding_id.to_owned(),
            hard_prompt_id: hard_prompt_id.to_owned(),
            option_probs,
        })
    }
}

impl LmOracle for SyntheticOracle {
    fn classification_records(
        &self,
        hard_prompt_id: &str,
        selection: &Selection,
    ) -> Result<Vec<RankClassificationRecord>, OracleError> {
        let affinity = self.effective_affinity(selection)?;
        let k = self.config.option_count;
        let seed_tag = self.config.seed;
        Ok((0..self.config.instances_per_prompt)
            .map(|j| {
                let instance = j.to_string();
                let mut rng = rng_for(seed_tag, &["record", hard_prompt_id, &instance]);
                // every draw happens before the affinity is consulted
                let gold = rng.random_range(0..k);
                let distractor = (gold + 1 + rng.random_range(0..k - 1)) % k;
                let u: f64 = rng.random();
                let mut ll: Vec<f64> = (0..k).map(|_| -rng.random_range(0.5..5.0)).collect();
                let top = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if u < affinity {
                    ll[gold] = top + 0.5;
                } else {
                    ll[distractor] = top + 0.5;
                }
                RankClassificationRecord {
                    instance_id: format!("{hard_prompt_id}#{j}"),
                    option_loglikelihoods: ll,
                    gold_index: gold,
                }
            })
            .collect())
    }
}
