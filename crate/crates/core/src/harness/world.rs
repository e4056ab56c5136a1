//! Planted-optimum synthetic world.
//!
//! Every embedding owns one Gaussian cluster of training keys. Cluster
//! centers sit on distinct coordinate axes at equal norm, so any two centers
//! are `separation * noise` apart. One embedding is planted as the best
//! prompt for the task: most task instances come from its cluster and the
//! synthetic oracle gives it the highest affinity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EvalTask, HardPromptInstances, HarnessError};
use crate::library::{
    build_library, BuildConfig, EmbeddingMetadata, PromptEmbedding, PromptMatrix,
    SourcePromptLibrary,
};
use crate::oracle::{SyntheticOracle, SyntheticOracleConfig};
use crate::seeding::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    pub datasets: usize,
    pub prompts_per_dataset: usize,
    pub key_dim: usize,
    /// Distance between cluster centers in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation of keys around their center.
    pub noise: f64,
    pub instances_per_embedding: usize,
    pub prefix_len: usize,
    pub model_dim: usize,
    pub hard_prompts: usize,
    pub task_instances: usize,
    /// Probability that a task instance is drawn from the planted cluster.
    pub query_purity: f64,
    pub option_count: usize,
    pub planted_affinity: f64,
    pub other_affinity: (f64, f64),
    pub oracle_instances: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            datasets: 5,
            prompts_per_dataset: 2,
            key_dim: 16,
            separation: 4.0,
            noise: 1.0,
            instances_per_embedding: 150,
            prefix_len: 4,
            model_dim: 8,
            hard_prompts: 1,
            task_instances: 64,
            query_purity: 0.6,
            option_count: 2,
            planted_affinity: 0.85,
            other_affinity: (0.35, 0.65),
            oracle_instances: 200,
        }
    }
}

impl WorldSpec {
    pub fn embedding_count(&self) -> usize {
        self.datasets * self.prompts_per_dataset
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidWorld(m.to_owned()));
        let n = self.embedding_count();
        if n == 0 {
            return fail("needs at least one dataset and one prompt per dataset");
        }
        if self.key_dim < n {
            return fail("key_dim must be at least the number of embeddings");
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return fail("separation must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail("noise must be non-negative");
        }
        if self.instances_per_embedding == 0 || self.task_instances == 0 || self.hard_prompts == 0 {
            return fail("instance and hard prompt counts must be positive");
        }
        if self.prefix_len == 0 || self.model_dim == 0 {
            return fail("prompt matrices need a positive shape");
        }
        if !(0.0..=1.0).contains(&self.query_purity) {
            return fail("query_purity must be in [0, 1]");
        }
        let (lo, hi) = self.other_affinity;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) || !(0.0..=1.0).contains(&self.planted_affinity) {
            return fail("affinities must lie in [0, 1] with a non-empty range");
        }
        if hi >= self.planted_affinity {
            return fail("the planted affinity must exceed every other affinity");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub embeddings: Vec<PromptEmbedding>,
    pub instances: BTreeMap<String, Vec<Vec<f32>>>,
    pub planted: String,
    pub task: EvalTask,
    pub oracle: SyntheticOracle,
}

fn embedding_id(dataset: usize, prompt: usize) -> String {
    format!("synthetic-d{dataset}/p{prompt}")
}

fn gaussian_key(rng: &mut impl Rng, center: &[f64], noise: f64) -> Vec<f32> {
    center
        .iter()
        .map(|c| (c + noise * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}

/// One center per embedding on its own axis, `separation * noise` apart.
fn cluster_centers(spec: &WorldSpec) -> Vec<Vec<f64>> {
    let radius = spec.separation * spec.noise / std::f64::consts::SQRT_2;
    (0..spec.embedding_count())
        .map(|e| {
            let mut c = vec![0.0; spec.key_dim];
            c[e] = radius;
            c
        })
        .collect()
}

impl SyntheticWorld {
    pub fn generate(spec: &WorldSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let n = spec.embedding_count();
        let centers = cluster_centers(spec);

        let mut rng = rng_for(spec.seed, &["world"]);
        let planted_index = rng.random_range(0..n);

        let mut ids = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        let mut instances = BTreeMap::new();
        let mut affinities = BTreeMap::new();
        for d in 0..spec.datasets {
            for p in 0..spec.prompts_per_dataset {
                let e = d * spec.prompts_per_dataset + p;
                let id = embedding_id(d, p);
                let mut erng = rng_for(spec.seed, &["embedding", &id]);
                let values = (0..spec.prefix_len * spec.model_dim)
                    .map(|_| erng.sample::<f32, _>(StandardNormal))
                    .collect();
                let matrix = PromptMatrix::new(spec.prefix_len, spec.model_dim, values)?;
                let metadata = EmbeddingMetadata {
                    source_dataset: format!("synthetic-d{d}"),
                    prompt_name: format!("p{p}"),
                    task_cluster: "synthetic".into(),
                    answer_choice_format: String::new(),
                };
                let keys = (0..spec.instances_per_embedding)
                    .map(|_| gaussian_key(&mut erng, &centers[e], spec.noise))
                    .collect();
                let affinity = if e == planted_index {
                    spec.planted_affinity
                } else {
                    erng.random_range(spec.other_affinity.0..=spec.other_affinity.1)
                };
                affinities.insert(id.clone(), affinity);
                instances.insert(id.clone(), keys);
                embeddings.push(PromptEmbedding::new(id.clone(), metadata, matrix));
                ids.push(id);
            }
        }

        let prompts = (0..spec.hard_prompts)
            .map(|h| {
                let hp = format!("hp{h}");
                let mut trng = rng_for(spec.seed, &["task", &hp]);
                let keys = (0..spec.task_instances)
                    .map(|_| {
                        let cluster = if n == 1 || trng.random::<f64>() < spec.query_purity {
                            planted_index
                        } else {
                            let other = trng.random_range(0..n - 1);
                            if other >= planted_index {
                                other + 1
                            } else {
                                other
                            }
                        };
                        gaussian_key(&mut trng, &centers[cluster], spec.noise)
                    })
                    .collect();
                HardPromptInstances { id: hp, keys }
            })
            .collect();

        let mut oracle_config = SyntheticOracleConfig::new(derive_seed(spec.seed, &["oracle"]));
        oracle_config.option_count = spec.option_count;
        oracle_config.instances_per_prompt = spec.oracle_instances;
        oracle_config.affinities = affinities;
        let oracle = SyntheticOracle::new(oracle_config)?;

        Ok(Self {
            spec: spec.clone(),
            embeddings,
            instances,
            planted: ids[planted_index].clone(),
            task: EvalTask {
                task_id: format!("synthetic-{}", spec.seed),
                option_count: spec.option_count,
                prompts,
            },
            oracle,
        })
    }

    pub fn build_library(&self, config: &BuildConfig) -> Result<SourcePromptLibrary, HarnessError> {
        let lib = build_library(self.embeddings.clone(), &self.instances, config)?;
        Ok(lib.with_provenance(BTreeMap::from([
            ("generator".to_owned(), "planted-optimum world".to_owned()),
            ("world_seed".to_owned(), self.spec.seed.to_string()),
            ("planted".to_owned(), self.planted.clone()),
        ])))
    }

    /// Keeps `datasets` source datasets with `prompts` prompts each. The
    /// planted embedding always survives; the other kept datasets and prompts
    /// are a seeded random choice.
    pub fn restrict(&self, datasets: usize, prompts: usize) -> Result<Self, HarnessError> {
        if datasets == 0 || prompts == 0 {
            return Err(HarnessError::InvalidWorld(
                "restriction needs at least one dataset and one prompt".into(),
            ));
        }
        let parse = |id: &str| -> (usize, usize) {
            let (d, p) = id
                .trim_start_matches("synthetic-d")
                .split_once("/p")
                .expect("generated id");
            (
                d.parse().expect("generated id"),
                p.parse().expect("generated id"),
            )
        };
        let (pd, pp) = parse(&self.planted);
        let mut rng = rng_for(self.spec.seed, &["restrict"]);
        let mut choose = |count: usize, total: usize, required: Option<usize>| -> BTreeSet<usize> {
            let mut rest: Vec<usize> = (0..total).filter(|&i| Some(i) != required).collect();
            rest.shuffle(&mut rng);
            required
                .into_iter()
                .chain(rest)
                .take(count.min(total))
                .collect()
        };
        let kept_datasets = choose(datasets, self.spec.datasets, Some(pd));
        let kept_prompts: BTreeMap<usize, BTreeSet<usize>> = kept_datasets
            .into_iter()
            .map(|d| {
                let required = (d == pd).then_some(pp);
                (d, choose(prompts, self.spec.prompts_per_dataset, required))
            })
            .collect();
        let keep = |id: &str| {
            let (d, p) = parse(id);
            kept_prompts.get(&d).is_some_and(|s| s.contains(&p))
        };
        let mut out = self.clone();
        out.embeddings.retain(|e| keep(&e.id));
        out.instances.retain(|id, _| keep(id));
        Ok(out)
    }
}
