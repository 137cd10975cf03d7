//! Benchmark aggregation and sweep drivers.
//!
//! Episode `i` of a benchmark is fully determined by `(cfg.seed, i)`: the task
//! is sampled from one derived stream and the pipeline randomness comes from
//! another, neither of which depends on the strategy. Two strategies run with
//! the same configuration therefore see identical episodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{run_episode, EpisodeError, EpisodeResult, PipelineConfig};
use crate::bank::FeatureBank;
use crate::criteria::SelectionStrategy;
use crate::seed::{derive_seed, rng_from_seed};
use crate::tasks::{sample_task, BenchmarkConfig, TaskError};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Config(#[from] TaskError),
    #[error("episode {index} failed to sample (replay seed {seed}): {source}")]
    Task {
        index: usize,
        seed: u64,
        #[source]
        source: TaskError,
    },
    #[error("episode {index} failed (replay seed {seed}): {source}")]
    Episode {
        index: usize,
        seed: u64,
        #[source]
        source: EpisodeError,
    },
    #[error("sweep grid `{0}` is empty")]
    EmptyGrid(&'static str),
}

impl BenchmarkError {
    /// Seed that replays the failing episode, if the failure was in one.
    pub fn replay_seed(&self) -> Option<u64> {
        match self {
            BenchmarkError::Task { seed, .. } | BenchmarkError::Episode { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// Compact per-episode record kept in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub task_digest: String,
    pub weighted_accuracy: f64,
    /// Episode-local indices labelled in each round.
    pub rounds: Vec<Vec<usize>>,
}

impl EpisodeRecord {
    fn from_result(index: usize, result: &EpisodeResult) -> Self {
        Self {
            index,
            seed: result.seed,
            task_digest: result.task_digest.clone(),
            weighted_accuracy: result.weighted_accuracy,
            rounds: result.traces.iter().map(|t| t.selected.clone()).collect(),
        }
    }
}

/// Aggregate over `tasks` episodes for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub strategy: String,
    pub mean_weighted_accuracy: f64,
    /// Sample standard deviation of episode accuracies.
    pub std: f64,
    /// `1.96 * std / sqrt(tasks)`.
    pub ci95: f64,
    pub tasks: usize,
    pub episodes: Vec<EpisodeRecord>,
    pub config: serde_json::Value,
}

/// Mean, sample standard deviation and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    (mean, std, 1.96 * std / (n as f64).sqrt())
}

pub fn episode_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

/// Samples and runs the episode identified by `seed`. This is the replay
/// entry point: a seed reported by a failed benchmark reproduces the failure.
pub fn run_seeded_episode(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    strategy: &dyn SelectionStrategy,
    seed: u64,
) -> Result<EpisodeResult, EpisodeFailure> {
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let mut task = sample_task(bank, cfg, &mut rng).map_err(EpisodeFailure::Task)?;
    let mut result = run_episode(bank, &mut task, strategy, pipeline, derive_seed(seed, 1))
        .map_err(EpisodeFailure::Episode)?;
    result.seed = seed;
    Ok(result)
}

#[derive(Debug, Error)]
pub enum EpisodeFailure {
    #[error(transparent)]
    Task(TaskError),
    #[error(transparent)]
    Episode(EpisodeError),
}

/// Full per-episode results for a benchmark, in episode order.
pub fn run_episodes(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    strategy: &dyn SelectionStrategy,
) -> Result<Vec<EpisodeResult>, BenchmarkError> {
    cfg.validate()?;
    let outcomes: Vec<_> = (0..cfg.tasks)
        .into_par_iter()
        .map(|index| {
            let seed = episode_seed(cfg.seed, index);
            run_seeded_episode(bank, cfg, pipeline, strategy, seed).map_err(|e| match e {
                EpisodeFailure::Task(source) => BenchmarkError::Task {
                    index,
                    seed,
                    source,
                },
                EpisodeFailure::Episode(source) => BenchmarkError::Episode {
                    index,
                    seed,
                    source,
                },
            })
        })
        .collect();
    outcomes.into_iter().collect()
}

/// Runs `cfg.tasks` paired episodes for `strategy` and aggregates them.
pub fn run_benchmark(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    strategy: &dyn SelectionStrategy,
) -> Result<BenchmarkReport, BenchmarkError> {
    let results = run_episodes(bank, cfg, pipeline, strategy)?;
    Ok(summarize(bank, cfg, pipeline, strategy.name(), &results))
}

/// Aggregates episode results (in episode order) into a report.
pub fn summarize(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    strategy: &str,
    results: &[EpisodeResult],
) -> BenchmarkReport {
    let accuracies: Vec<f64> = results.iter().map(|r| r.weighted_accuracy).collect();
    let (mean, std, ci95) = mean_ci95(&accuracies);
    BenchmarkReport {
        strategy: strategy.to_string(),
        mean_weighted_accuracy: mean,
        std,
        ci95,
        tasks: results.len(),
        episodes: results
            .iter()
            .enumerate()
            .map(|(i, r)| EpisodeRecord::from_result(i, r))
            .collect(),
        config: serde_json::json!({
            "bench": cfg,
            "pipeline": pipeline,
            "bank": bank.source(),
        }),
    }
}

/// Two strategies on the same episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub active: String,
    pub baseline: String,
    pub active_mean: f64,
    pub active_ci95: f64,
    pub baseline_mean: f64,
    pub baseline_ci95: f64,
    /// `active_mean - baseline_mean`.
    pub diff: f64,
    /// 95% half-width of the mean per-episode difference.
    pub diff_ci95: f64,
}

pub fn paired_comparison(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    active: &dyn SelectionStrategy,
    baseline: &dyn SelectionStrategy,
) -> Result<PairedComparison, BenchmarkError> {
    let a = run_benchmark(bank, cfg, pipeline, active)?;
    let b = run_benchmark(bank, cfg, pipeline, baseline)?;
    let diffs: Vec<f64> = a
        .episodes
        .iter()
        .zip(&b.episodes)
        .map(|(x, y)| x.weighted_accuracy - y.weighted_accuracy)
        .collect();
    let (_, _, diff_ci95) = mean_ci95(&diffs);
    Ok(PairedComparison {
        active: a.strategy,
        baseline: b.strategy,
        active_mean: a.mean_weighted_accuracy,
        active_ci95: a.ci95,
        baseline_mean: b.mean_weighted_accuracy,
        baseline_ci95: b.ci95,
        diff: a.mean_weighted_accuracy - b.mean_weighted_accuracy,
        diff_ci95,
    })
}

/// One cell of an active-minus-baseline heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub alpha: f64,
    pub labels: usize,
    pub samples: usize,
    pub diff: f64,
}

/// Grid of paired differences over `(alpha, labels, samples)`, iterated in
/// that nesting order. Cells with fewer samples than labels are reported as 0.
#[allow(clippy::too_many_arguments)]
pub fn heatmap_sweep(
    bank: &FeatureBank,
    base: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    label_grid: &[usize],
    sample_grid: &[usize],
    alpha_list: &[f64],
    active: &dyn SelectionStrategy,
    baseline: &dyn SelectionStrategy,
) -> Result<Vec<HeatmapCell>, BenchmarkError> {
    if label_grid.is_empty() {
        return Err(BenchmarkError::EmptyGrid("labels"));
    }
    if sample_grid.is_empty() {
        return Err(BenchmarkError::EmptyGrid("samples"));
    }
    if alpha_list.is_empty() {
        return Err(BenchmarkError::EmptyGrid("alphas"));
    }
    let mut cells = Vec::new();
    for &alpha in alpha_list {
        for &labels in label_grid {
            for &samples in sample_grid {
                let diff = if samples < labels {
                    0.0
                } else {
                    let cfg = BenchmarkConfig {
                        alpha,
                        labels,
                        samples,
                        ..base.clone()
                    };
                    paired_comparison(bank, &cfg, pipeline, active, baseline)?.diff
                };
                cells.push(HeatmapCell {
                    alpha,
                    labels,
                    samples,
                    diff,
                });
            }
        }
    }
    Ok(cells)
}

/// CSV with header `alpha,labels,samples,diff`.
pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("alpha,labels,samples,diff\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.alpha, c.labels, c.samples, c.diff
        ));
    }
    out
}

/// Paired comparisons with the configured smoothing and with smoothing off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingAblation {
    pub smoothed: PairedComparison,
    pub unsmoothed: PairedComparison,
}

pub fn smoothing_ablation(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    active: &dyn SelectionStrategy,
    baseline: &dyn SelectionStrategy,
) -> Result<SmoothingAblation, BenchmarkError> {
    let mut off = pipeline.clone();
    off.smoothing.kappa = 0;
    Ok(SmoothingAblation {
        smoothed: paired_comparison(bank, cfg, pipeline, active, baseline)?,
        unsmoothed: paired_comparison(bank, cfg, &off, active, baseline)?,
    })
}
