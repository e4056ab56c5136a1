//! Ablation grids over the planted-optimum world.
//!
//! A grid maps axis names to value lists; every combination is one cell.
//! Each cell regenerates the world for every `world_seeds` entry, builds the
//! library, and evaluates with oracle tracking, so cells share the same
//! worlds and query seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport, HarnessError, PipelineConfig, WorldSpec};
use crate::harness::SyntheticWorld;
use crate::library::{BuildConfig, SamplingMethod};
use crate::selection::Strategy;
use crate::DOCUMENT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationAxis {
    QueryCount,
    TopN,
    NPrime,
    NPerPrompt,
    SamplingMethod,
    PromptsCount,
    DatasetsCount,
    Strategy,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 8] = [
        Self::QueryCount,
        Self::TopN,
        Self::NPrime,
        Self::NPerPrompt,
        Self::SamplingMethod,
        Self::PromptsCount,
        Self::DatasetsCount,
        Self::Strategy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::QueryCount => "Q",
            Self::TopN => "N",
            Self::NPrime => "n_prime",
            Self::NPerPrompt => "n_per_prompt",
            Self::SamplingMethod => "sampling_method",
            Self::PromptsCount => "prompts_count",
            Self::DatasetsCount => "datasets_count",
            Self::Strategy => "strategy",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Q" | "query_count" => Self::QueryCount,
            "N" | "top_n" => Self::TopN,
            "n_prime" => Self::NPrime,
            "n" | "n_per_prompt" => Self::NPerPrompt,
            "sampling_method" | "method" => Self::SamplingMethod,
            "prompts_count" => Self::PromptsCount,
            "datasets_count" => Self::DatasetsCount,
            "strategy" => Self::Strategy,
            other => return Err(HarnessError::UnknownAxis(other.to_owned())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(u64),
    Text(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Text(v) => f.write_str(v),
        }
    }
}

/// Axis name to the values it takes.
pub type AblationGrid = BTreeMap<String, Vec<AxisValue>>;

fn default_strategy() -> Strategy {
    Strategy::Frequency
}
fn default_world_seeds() -> Vec<u64> {
    (0..20).collect()
}
fn default_seeds() -> Vec<u64> {
    (0..super::DEFAULT_SEED_COUNT as u64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationBase {
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default = "default_world_seeds")]
    pub world_seeds: Vec<u64>,
    /// Query-sampling seeds averaged inside each world.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub prompts_count: Option<usize>,
    #[serde(default)]
    pub datasets_count: Option<usize>,
}

impl Default for AblationBase {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            strategy: default_strategy(),
            pipeline: PipelineConfig::default(),
            build: BuildConfig::default(),
            world_seeds: default_world_seeds(),
            seeds: default_seeds(),
            prompts_count: None,
            datasets_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: BTreeMap<String, AxisValue>,
    /// Mean over worlds of the per-task mean accuracy.
    pub mean: f64,
    /// Mean over worlds of the std across hard prompts.
    pub std: f64,
    pub oracle_mean: f64,
    /// Fraction of (world, seed, hard prompt) runs whose top selected
    /// embedding is the planted one.
    pub success_rate: f64,
    pub trials: usize,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub version: u32,
    pub axes: Vec<String>,
    pub base: AblationBase,
    pub rows: Vec<AblationRow>,
}

fn positive(axis: AblationAxis, value: &AxisValue) -> Result<usize, HarnessError> {
    match value {
        AxisValue::Int(v) if *v > 0 => Ok(*v as usize),
        _ => Err(HarnessError::InvalidAxisValue {
            axis: axis.to_string(),
            value: value.to_string(),
            reason: "expected a positive integer".into(),
        }),
    }
}

fn text(axis: AblationAxis, value: &AxisValue) -> Result<String, HarnessError> {
    match value {
        AxisValue::Text(v) => Ok(v.clone()),
        AxisValue::Int(_) => Err(HarnessError::InvalidAxisValue {
            axis: axis.to_string(),
            value: value.to_string(),
            reason: "expected a name".into(),
        }),
    }
}

fn apply(
    base: &mut AblationBase,
    axis: AblationAxis,
    value: &AxisValue,
) -> Result<(), HarnessError> {
    let invalid = |reason: String| HarnessError::InvalidAxisValue {
        axis: axis.to_string(),
        value: value.to_string(),
        reason,
    };
    match axis {
        AblationAxis::QueryCount => base.pipeline.query_count = positive(axis, value)?,
        AblationAxis::TopN => base.pipeline.top_n = positive(axis, value)?,
        AblationAxis::NPrime => base.pipeline.n_prime = positive(axis, value)?,
        AblationAxis::NPerPrompt => base.build.n_per_prompt = positive(axis, value)?,
        AblationAxis::PromptsCount => base.prompts_count = Some(positive(axis, value)?),
        AblationAxis::DatasetsCount => base.datasets_count = Some(positive(axis, value)?),
        AblationAxis::SamplingMethod => {
            base.build.sampling_method = text(axis, value)?
                .parse::<SamplingMethod>()
                .map_err(|e| invalid(e.to_string()))?
        }
        AblationAxis::Strategy => {
            base.strategy = text(axis, value)?
                .parse::<Strategy>()
                .map_err(|e| invalid(e.to_string()))?
        }
    }
    Ok(())
}

fn cartesian(axes: &[(String, AblationAxis, Vec<AxisValue>)]) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new()];
    for (_, _, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                (0..values.len()).map(move |i| {
                    let mut next = prefix.clone();
                    next.push(i);
                    next
                })
            })
            .collect();
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub std: f64,
    pub oracle_mean: f64,
    /// Runs whose top selected embedding is the planted one.
    pub successes: usize,
    pub trials: usize,
    pub reports: Vec<EvalReport>,
}

impl CellSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Evaluates one configuration over every world seed.
pub fn run_cell(base: &AblationBase) -> Result<CellSummary, HarnessError> {
    if base.world_seeds.is_empty() || base.seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    let per_world = base
        .world_seeds
        .par_iter()
        .map(|&ws| {
            let mut world = SyntheticWorld::generate(&base.world.with_seed(ws))?;
            if base.prompts_count.is_some() || base.datasets_count.is_some() {
                world = world.restrict(
                    base.datasets_count.unwrap_or(base.world.datasets),
                    base.prompts_count.unwrap_or(base.world.prompts_per_dataset),
                )?;
            }
            let library = world.build_library(&base.build)?;
            let report = evaluate(
                &world.task,
                &library,
                base.strategy,
                &base.pipeline,
                &base.seeds,
                &world.oracle,
                true,
            )?;
            let (hits, trials) = report.per_prompt.values().fold((0, 0), |(h, t), p| {
                let ok = p
                    .selections
                    .iter()
                    .filter(|s| s.first().is_some_and(|w| w.id == world.planted))
                    .count();
                (h + ok, t + p.selections.len())
            });
            Ok((report, hits, trials))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let worlds = per_world.len() as f64;
    let mean = per_world.iter().map(|(r, _, _)| r.mean).sum::<f64>() / worlds;
    let std = per_world.iter().map(|(r, _, _)| r.std).sum::<f64>() / worlds;
    let oracle_mean = per_world
        .iter()
        .map(|(r, _, _)| r.oracle_mean.unwrap_or(f64::NAN))
        .sum::<f64>()
        / worlds;
    Ok(CellSummary {
        mean,
        std,
        oracle_mean,
        successes: per_world.iter().map(|(_, h, _)| h).sum(),
        trials: per_world.iter().map(|(_, _, t)| t).sum(),
        reports: per_world.into_iter().map(|(r, _, _)| r).collect(),
    })
}

pub fn run_ablation(
    grid: &AblationGrid,
    base: &AblationBase,
) -> Result<AblationTable, HarnessError> {
    let axes = grid
        .iter()
        .map(|(name, values)| {
            let axis: AblationAxis = name.parse()?;
            if values.is_empty() {
                return Err(HarnessError::InvalidAxisValue {
                    axis: name.clone(),
                    value: "[]".into(),
                    reason: "axis has no values".into(),
                });
            }
            Ok((axis.as_str().to_owned(), axis, values.clone()))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let cells = cartesian(&axes)
        .into_iter()
        .map(|choice| {
            let mut config = base.clone();
            let mut cell = BTreeMap::new();
            for ((name, axis, values), &i) in axes.iter().zip(&choice) {
                apply(&mut config, *axis, &values[i])?;
                cell.insert(name.clone(), values[i].clone());
            }
            Ok((cell, config))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let rows = cells
        .into_par_iter()
        .map(|(cell, config)| {
            let summary = run_cell(&config)?;
            Ok(AblationRow {
                cell,
                mean: summary.mean,
                std: summary.std,
                oracle_mean: summary.oracle_mean,
                success_rate: summary.success_rate(),
                trials: summary.trials,
                reports: summary.reports,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    Ok(AblationTable {
        version: DOCUMENT_VERSION,
        axes: axes.into_iter().map(|(name, _, _)| name).collect(),
        base: base.clone(),
        rows,
    })
}

/// One CSV line per cell: axis columns, then the summary statistics.
pub fn write_ablation_csv(table: &AblationTable, out: impl Write) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Csv(e.to_string());
    let mut writer = csv::Writer::from_writer(out);
    let mut header = table.axes.clone();
    header.extend(["mean", "std", "oracle_mean", "success_rate", "trials"].map(String::from));
    writer.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut record: Vec<String> = table.axes.iter().map(|a| row.cell[a].to_string()).collect();
        record.push(format!("{:.6}", row.mean));
        record.push(format!("{:.6}", row.std));
        record.push(format!("{:.6}", row.oracle_mean));
        record.push(format!("{:.6}", row.success_rate));
        record.push(row.trials.to_string());
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| HarnessError::Csv(e.to_string()))
}
