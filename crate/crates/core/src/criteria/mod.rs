//! Selection criteria and the strategy registry.
//!
//! Each labelling strategy implements [`SelectionStrategy`] and is registered
//! by name in a [`StrategyRegistry`]; the active loop only ever talks to the
//! trait object. Built-in names: `lss`, `lss-full`, `margin`, `kmedoid`,
//! `random`, `oracle`.

mod kmedoid;
mod lpr;
mod margin;
mod oracle;
mod random;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{ClusterModel, EmConfig};

pub use kmedoid::{kmedoid_scores, KMedoid};
pub use lpr::{lpr_scores, LprMode, Lss};
pub use margin::{margin_scores, Margin};
pub use oracle::{
    ncm_predict, oracle_select, oracle_select_pipeline, Oracle, OracleConfig, OracleObjective,
    OracleSelection,
};
pub use random::{random_scores, RandomSelection};

#[derive(Debug, Error, PartialEq)]
pub enum CriteriaError {
    #[error("unknown strategy `{name}` (known: {known})")]
    UnknownStrategy { name: String, known: String },
    #[error("oracle would enumerate {count} subsets, above the cap of {cap}; set oracle.subsample to sample subsets instead")]
    EnumerationCap { count: u128, cap: u64 },
    #[error("oracle budget {budget} exceeds the {n} episode samples")]
    BudgetTooLarge { budget: usize, n: usize },
}

/// Which end of a score means "confident".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsConfident,
    HigherIsConfident,
}

/// Per-sample scores produced by a criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// `n x K` criterion values (`n x 1` for cluster-independent scores).
    pub per_cluster: Array2<f64>,
    /// Score of each sample with respect to its hard cluster.
    pub assigned: Vec<f64>,
    pub direction: Direction,
    /// Samples whose full-form lpr denominator vanished and fell back to the
    /// constant-scale ratio.
    pub fallbacks: usize,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    /// `Less` when sample `a` is more confident than `b`; lower index wins ties.
    pub fn confidence_order(&self, a: usize, b: usize) -> Ordering {
        let (sa, sb) = (self.assigned[a], self.assigned[b]);
        let by_score = match self.direction {
            Direction::LowerIsConfident => sa.total_cmp(&sb),
            Direction::HigherIsConfident => sb.total_cmp(&sa),
        };
        by_score.then(a.cmp(&b))
    }

    /// `Less` when sample `a` is less confident than `b`; lower index wins ties.
    pub fn uncertainty_order(&self, a: usize, b: usize) -> Ordering {
        let (sa, sb) = (self.assigned[a], self.assigned[b]);
        let by_score = match self.direction {
            Direction::LowerIsConfident => sb.total_cmp(&sa),
            Direction::HigherIsConfident => sa.total_cmp(&sb),
        };
        by_score.then(a.cmp(&b))
    }
}

/// Inputs available to a scoring pass.
#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    /// Preprocessed episode features.
    pub features: ArrayView2<'a, f64>,
    pub model: &'a ClusterModel,
    /// Seed for strategies that need randomness; distinct per round.
    pub seed: u64,
}

/// Inputs for strategies that pick their whole label set before any round.
#[derive(Debug, Clone, Copy)]
pub struct PreselectContext<'a> {
    pub features: ArrayView2<'a, f64>,
    /// Hidden ground truth per episode sample. Only the oracle looks at it.
    pub truth: &'a [usize],
    pub k: usize,
    pub budget: usize,
    pub em: &'a EmConfig,
    pub seed: u64,
}

/// A labelling strategy.
pub trait SelectionStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable;

    /// Whether the first round takes one confident sample from each cluster.
    /// Strategies that ignore cluster structure pick globally instead.
    fn stratified_first_round(&self) -> bool {
        true
    }

    /// Chooses the full label set up front, bypassing the rounds. `None` for
    /// round-based strategies.
    fn preselect(&self, _ctx: &PreselectContext<'_>) -> Option<Result<Vec<usize>, CriteriaError>> {
        None
    }
}

/// Name -> strategy lookup.
#[derive(Debug, Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, Arc<dyn SelectionStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every built-in strategy.
    pub fn builtin(oracle: OracleConfig) -> Self {
        let mut registry = Self::new();
        registry.register(Arc::new(Lss::new(LprMode::Simplified)));
        registry.register(Arc::new(Lss::new(LprMode::Full)));
        registry.register(Arc::new(Margin));
        registry.register(Arc::new(KMedoid));
        registry.register(Arc::new(RandomSelection));
        registry.register(Arc::new(Oracle::new(oracle)));
        registry
    }

    /// Adds or replaces the strategy under its own name.
    pub fn register(&mut self, strategy: Arc<dyn SelectionStrategy>) {
        self.entries.insert(strategy.name().to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SelectionStrategy>, CriteriaError> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| CriteriaError::UnknownStrategy {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

pub(crate) fn assigned_from(per_cluster: &Array2<f64>, hard: &[usize]) -> Vec<f64> {
    hard.iter()
        .enumerate()
        .map(|(i, &k)| per_cluster[[i, k]])
        .collect()
}
