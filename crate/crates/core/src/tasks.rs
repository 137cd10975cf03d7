//! Episode sampling with Dirichlet class imbalance, and the weighted-accuracy
//! metric.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::TaskInstance;
use crate::bank::{BankError, FeatureBank};
use crate::inference::Constraints;

/// Proportion draws attempted before giving up on an unsatisfiable demand.
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("bank has {available} classes, episode needs {ways}")]
    NotEnoughClasses { available: usize, ways: usize },
    #[error(
        "could not satisfy class demand after {attempts} proportion draws; last draw asked for {demand} rows of class {class}, which has {population}"
    )]
    DemandExceedsPopulation {
        attempts: usize,
        class: usize,
        demand: usize,
        population: usize,
    },
    #[error(transparent)]
    Bank(#[from] BankError),
}

/// Episode shape and benchmark size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Number of classes per episode (K).
    pub ways: usize,
    /// Label budget.
    pub labels: usize,
    /// Total samples per episode (N).
    pub samples: usize,
    /// Dirichlet concentration; smaller is more imbalanced.
    pub alpha: f64,
    /// Number of episodes.
    pub tasks: usize,
    /// Uniform class counts instead of Dirichlet proportions.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            labels: 5,
            samples: 80,
            alpha: 2.0,
            tasks: 10_000,
            balanced: false,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::InvalidConfig(m));
        if self.ways < 2 {
            return bad(format!("ways must be at least 2, got {}", self.ways));
        }
        if self.samples < self.ways {
            return bad(format!(
                "samples ({}) must be at least ways ({})",
                self.samples, self.ways
            ));
        }
        if self.labels > self.samples {
            return bad(format!(
                "labels ({}) cannot exceed samples ({})",
                self.labels, self.samples
            ));
        }
        if !self.balanced && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.tasks == 0 {
            return bad("tasks must be at least 1".into());
        }
        Ok(())
    }
}

/// Draws class proportions from a symmetric Dirichlet via normalized gammas.
pub fn dirichlet_proportions(k: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Integer counts summing to `total` with every entry at least one: each
/// class gets one row, the remaining `total - k` rows are split by
/// largest-remainder rounding of the proportions (lower index on equal
/// remainders).
pub fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let k = proportions.len();
    assert!(total >= k, "total {total} below class count {k}");
    let rest = (total - k) as f64;
    let quotas: Vec<f64> = proportions.iter().map(|p| p * rest).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(total - k - assigned) {
        counts[c] += 1;
    }
    counts.iter_mut().for_each(|c| *c += 1);
    counts
}

/// `floor(total / k)` each, plus one for the first `total mod k` classes.
pub fn balanced_counts(k: usize, total: usize) -> Vec<usize> {
    (0..k)
        .map(|c| total / k + usize::from(c < total % k))
        .collect()
}

/// Per-class counts for one episode drawn from `classes`.
pub fn draw_counts(
    bank: &FeatureBank,
    classes: &[usize],
    cfg: &BenchmarkConfig,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, TaskError> {
    let k = classes.len();
    let mut last = (0, 0, 0);
    for _ in 0..MAX_ATTEMPTS {
        let counts = if cfg.balanced {
            balanced_counts(k, cfg.samples)
        } else {
            largest_remainder_counts(&dirichlet_proportions(k, cfg.alpha, rng), cfg.samples)
        };
        let over = classes
            .iter()
            .zip(&counts)
            .find(|(&c, &n)| n > bank.class_members(c).len());
        match over {
            None => return Ok(counts),
            Some((&class, &demand)) => {
                last = (class, demand, bank.class_members(class).len());
                if cfg.balanced {
                    break;
                }
            }
        }
    }
    Err(TaskError::DemandExceedsPopulation {
        attempts: if cfg.balanced { 1 } else { MAX_ATTEMPTS },
        class: last.0,
        demand: last.1,
        population: last.2,
    })
}

/// Samples one episode: `ways` distinct classes, Dirichlet (or balanced)
/// counts, rows drawn without replacement, then shuffled.
pub fn sample_task(
    bank: &FeatureBank,
    cfg: &BenchmarkConfig,
    rng: &mut impl Rng,
) -> Result<TaskInstance, TaskError> {
    cfg.validate()?;
    if bank.num_classes() < cfg.ways {
        return Err(TaskError::NotEnoughClasses {
            available: bank.num_classes(),
            ways: cfg.ways,
        });
    }
    let class_ids = index::sample(rng, bank.num_classes(), cfg.ways).into_vec();
    let counts = draw_counts(bank, &class_ids, cfg, rng)?;
    let mut sample_ids = Vec::with_capacity(cfg.samples);
    for (&class, &count) in class_ids.iter().zip(&counts) {
        let members = bank.class_members(class);
        sample_ids.extend(
            index::sample(rng, members.len(), count)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    sample_ids.shuffle(rng);
    Ok(TaskInstance::new(bank, sample_ids, class_ids, cfg.labels)?)
}

/// Per-class recall with revealed samples counted correct. Classes without
/// samples get `None`.
pub fn class_recalls(
    predictions: &[usize],
    truth: &[usize],
    revealed: &Constraints,
    k: usize,
) -> Vec<Option<f64>> {
    let mut size = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (i, (&p, &t)) in predictions.iter().zip(truth).enumerate() {
        size[t] += 1;
        if revealed.contains_key(&i) || p == t {
            correct[t] += 1;
        }
    }
    size.iter()
        .zip(&correct)
        .map(|(&s, &c)| (s > 0).then(|| c as f64 / s as f64))
        .collect()
}

/// Mean per-class recall over classes present in `truth`, with revealed
/// samples forced correct.
pub fn weighted_accuracy(
    predictions: &[usize],
    truth: &[usize],
    revealed: &Constraints,
    k: usize,
) -> f64 {
    let recalls: Vec<f64> = class_recalls(predictions, truth, revealed, k)
        .into_iter()
        .flatten()
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}
