//! Exhaustive label-subset oracle.
//!
//! For every candidate label subset the oracle classifies all samples from the
//! subset's revealed labels and keeps the subset with the best weighted
//! accuracy. It peeks at the ground truth, so it is an upper reference, not a
//! usable strategy.
//!
//! Two classifiers can score a subset: nearest class mean, or the same
//! constrained clustering that produces every strategy's final predictions.
//! Only the latter makes the oracle an upper bound on the other strategies
//! episode by episode, so it is the default.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    lpr_scores, CriteriaError, LprMode, PreselectContext, ScoreContext, ScoreTable,
    SelectionStrategy,
};
use crate::inference::{cluster_with_labels, Constraints, EmConfig};
use crate::seed::rng_from_seed;
use crate::tasks::weighted_accuracy;

/// Classifier used to score a candidate subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleObjective {
    /// Nearest class mean over the subset's labels.
    Ncm,
    /// Constrained soft k-means from the label means, as in the final
    /// classification step of an episode.
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub objective: OracleObjective,
    /// Largest number of subsets enumerated exhaustively.
    pub cap: u64,
    /// When the enumeration exceeds `cap`, evaluate this many uniformly drawn
    /// subsets instead. `None` refuses oversized enumerations.
    pub subsample: Option<usize>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            objective: OracleObjective::Pipeline,
            cap: 2_000_000,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    /// Sorted sample indices.
    pub subset: Vec<usize>,
    pub accuracy: f64,
    /// Number of subsets scored.
    pub evaluated: u64,
    pub exhaustive: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| {
        acc.saturating_mul((n - i) as u128) / (i as u128 + 1)
    })
}

/// Nearest-class-mean predictions from the labels of `subset`. Classes with no
/// label in the subset are never predicted; revealed samples keep their label.
pub fn ncm_predict(
    z: ArrayView2<'_, f64>,
    truth: &[usize],
    subset: &[usize],
    k: usize,
) -> Vec<usize> {
    let d = z.ncols();
    let mut means = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for &s in subset {
        let mut row = means.row_mut(truth[s]);
        row += &z.row(s);
        counts[truth[s]] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    for &c in &present {
        let mut row = means.row_mut(c);
        row /= counts[c] as f64;
    }
    let mut predictions: Vec<usize> = z
        .outer_iter()
        .map(|row| {
            let mut best = (f64::INFINITY, present[0]);
            for &c in &present {
                let dist: f64 = row
                    .iter()
                    .zip(means.row(c).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            best.1
        })
        .collect();
    for &s in subset {
        predictions[s] = truth[s];
    }
    predictions
}

fn subset_accuracy(z: ArrayView2<'_, f64>, truth: &[usize], subset: &[usize], k: usize) -> f64 {
    let predictions = ncm_predict(z, truth, subset, k);
    let revealed: Constraints = subset.iter().map(|&s| (s, truth[s])).collect();
    weighted_accuracy(&predictions, truth, &revealed, k)
}

/// Advances `idx` to the next combination in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let l = idx.len();
    for pos in (0..l).rev() {
        if idx[pos] < n - l + pos {
            idx[pos] += 1;
            for j in pos + 1..l {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Best label subset of size `budget` under nearest-class-mean weighted
/// accuracy. Ties go to the lexicographically smallest subset.
pub fn oracle_select(
    z: ArrayView2<'_, f64>,
    truth: &[usize],
    k: usize,
    budget: usize,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleSelection, CriteriaError> {
    search(z.nrows(), budget, cfg, seed, |subset| {
        subset_accuracy(z, truth, subset, k)
    })
}

/// Like [`oracle_select`], but scores each subset with the labelled
/// clustering used for final predictions.
pub fn oracle_select_pipeline(
    z: ArrayView2<'_, f64>,
    truth: &[usize],
    k: usize,
    budget: usize,
    em: &EmConfig,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleSelection, CriteriaError> {
    search(z.nrows(), budget, cfg, seed, |subset| {
        let revealed: Constraints = subset.iter().map(|&s| (s, truth[s])).collect();
        let mut predictions = match cluster_with_labels(z, k, &revealed, em) {
            Ok(model) => model.hard,
            Err(_) => return f64::NEG_INFINITY,
        };
        for &s in subset {
            predictions[s] = truth[s];
        }
        weighted_accuracy(&predictions, truth, &revealed, k)
    })
}

/// Maximizes `score` over size-`budget` subsets of `0..n`: exhaustively when
/// the count fits under the cap, otherwise over `cfg.subsample` random draws.
fn search(
    n: usize,
    budget: usize,
    cfg: &OracleConfig,
    seed: u64,
    score: impl Fn(&[usize]) -> f64,
) -> Result<OracleSelection, CriteriaError> {
    if budget > n {
        return Err(CriteriaError::BudgetTooLarge { budget, n });
    }
    let count = binomial(n, budget);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let consider = |subset: Vec<usize>, best: &mut Option<(f64, Vec<usize>)>| {
        let acc = score(&subset);
        let better = match best {
            None => true,
            Some((b, s)) => acc > *b || (acc == *b && subset < *s),
        };
        if better {
            *best = Some((acc, subset));
        }
    };

    if count <= cfg.cap as u128 {
        let mut idx: Vec<usize> = (0..budget).collect();
        loop {
            consider(idx.clone(), &mut best);
            if !next_combination(&mut idx, n) {
                break;
            }
        }
        let (accuracy, subset) = best.expect("at least one subset");
        return Ok(OracleSelection {
            subset,
            accuracy,
            evaluated: count as u64,
            exhaustive: true,
        });
    }

    let draws = cfg.subsample.ok_or(CriteriaError::EnumerationCap {
        count,
        cap: cfg.cap,
    })?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..draws.max(1) {
        let mut subset = rand::seq::index::sample(&mut rng, n, budget).into_vec();
        subset.sort_unstable();
        consider(subset, &mut best);
    }
    let (accuracy, subset) = best.expect("at least one draw");
    Ok(OracleSelection {
        subset,
        accuracy,
        evaluated: draws.max(1) as u64,
        exhaustive: false,
    })
}

#[derive(Debug, Clone)]
pub struct Oracle {
    cfg: OracleConfig,
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Self {
        Self { cfg }
    }
}

impl SelectionStrategy for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    /// Only used for trace reporting; selection happens in `preselect`.
    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable {
        lpr_scores(ctx.features, ctx.model, LprMode::Simplified)
    }

    fn preselect(&self, ctx: &PreselectContext<'_>) -> Option<Result<Vec<usize>, CriteriaError>> {
        let selection = match self.cfg.objective {
            OracleObjective::Ncm => oracle_select(
                ctx.features,
                ctx.truth,
                ctx.k,
                ctx.budget,
                &self.cfg,
                ctx.seed,
            ),
            OracleObjective::Pipeline => oracle_select_pipeline(
                ctx.features,
                ctx.truth,
                ctx.k,
                ctx.budget,
                ctx.em,
                &self.cfg,
                ctx.seed,
            ),
        };
        Some(selection.map(|s| s.subset))
    }
}
