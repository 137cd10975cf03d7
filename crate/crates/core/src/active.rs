//! The two-tier active labelling loop for a single episode.
//!
//! 1. Preprocess the episode features.
//! 2. Cluster without labels (best of several random restarts).
//! 3. Round one: label the most confident sample of each cluster.
//! 4. While budget remains: re-cluster from the label means with the revealed
//!    samples pinned, then label the least confident samples globally.
//! 5. Classify with a final constrained clustering; revealed samples keep
//!    their label.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank::{BankError, FeatureBank};
use crate::criteria::{
    CriteriaError, OracleConfig, PreselectContext, ScoreContext, ScoreTable, SelectionStrategy,
};
pub use crate::inference::cluster_with_labels;
use crate::inference::{fit_random_multi, ClusterModel, Constraints, EmConfig, InferenceError};
use crate::preprocess::{preprocess_episode, PreprocessError, SmoothingConfig};
use crate::seed::derive_seed;
use crate::tasks::{class_recalls, weighted_accuracy};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("label budget must be at least 1: classes cannot be matched without labels")]
    ZeroBudget,
    #[error("label budget {budget} exceeds the {n} episode samples")]
    BudgetExceedsSamples { budget: usize, n: usize },
    #[error("label budget of {0} is exhausted")]
    BudgetExhausted(usize),
    #[error("sample {sample} was already revealed")]
    AlreadyRevealed { sample: usize },
    #[error("episode needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("bank row {row} has class {class}, which is not one of the episode classes")]
    ForeignSample { row: usize, class: usize },
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
}

/// All tunables of the per-episode pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub smoothing: SmoothingConfig,
    pub em: EmConfig,
    pub oracle: OracleConfig,
}

/// One K-way, budget-limited episode drawn from a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    /// Bank row of each episode sample.
    pub sample_ids: Vec<usize>,
    /// Bank class id of each episode class; position is the episode class.
    pub class_ids: Vec<usize>,
    pub budget: usize,
    truth: Vec<usize>,
    revealed: Constraints,
}

impl TaskInstance {
    pub fn new(
        bank: &FeatureBank,
        sample_ids: Vec<usize>,
        class_ids: Vec<usize>,
        budget: usize,
    ) -> Result<Self, BankError> {
        let truth = sample_ids
            .iter()
            .map(|&row| {
                let label = bank.reveal_label(row)?;
                class_ids
                    .iter()
                    .position(|&c| c == label)
                    .ok_or(BankError::InvalidLabel {
                        row,
                        label,
                        num_classes: class_ids.len(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            sample_ids,
            class_ids,
            budget,
            truth,
            revealed: Constraints::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn k(&self) -> usize {
        self.class_ids.len()
    }

    /// Ground-truth episode class per sample. Only evaluation and the oracle
    /// should read this.
    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn revealed(&self) -> &Constraints {
        &self.revealed
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget - self.revealed.len()
    }

    /// Asks the bank for the label of episode sample `local` and records it.
    pub fn reveal(&mut self, bank: &FeatureBank, local: usize) -> Result<usize, EpisodeError> {
        if self.revealed.contains_key(&local) {
            return Err(EpisodeError::AlreadyRevealed { sample: local });
        }
        if self.remaining_budget() == 0 {
            return Err(EpisodeError::BudgetExhausted(self.budget));
        }
        let row = *self
            .sample_ids
            .get(local)
            .ok_or(BankError::IndexOutOfRange {
                index: local,
                len: self.n(),
            })?;
        let label = bank.reveal_label(row)?;
        let class = self
            .class_ids
            .iter()
            .position(|&c| c == label)
            .ok_or(EpisodeError::ForeignSample { row, class: label })?;
        self.revealed.insert(local, class);
        Ok(class)
    }

    /// Short hash of the episode's rows, classes and budget.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.sample_ids.iter().chain(&self.class_ids) {
            hasher.update((*v as u64).to_le_bytes());
        }
        hasher.update((self.budget as u64).to_le_bytes());
        hasher.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Episode rows as `f64`, in episode order.
    pub fn raw_features(&self, bank: &FeatureBank) -> Array2<f64> {
        Array2::from_shape_fn((self.n(), bank.dim()), |(i, j)| {
            f64::from(bank.features()[[self.sample_ids[i], j]])
        })
    }
}

/// What happened in one labelling round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round_index: usize,
    pub strategy: String,
    /// Episode-local indices of the samples labelled this round.
    pub selected: Vec<usize>,
    /// Bank rows of the same samples.
    pub selected_rows: Vec<usize>,
    pub scores_at_selection: Vec<f64>,
    /// Hard objective of the clustering the selection was based on.
    pub objective: f64,
    /// Sum of all centroid coordinates.
    pub centroid_checksum: f64,
    /// Empty clusters whose round-one pick was replaced by a global pick.
    pub substitutions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_digest: String,
    pub strategy: String,
    /// Seed given to [`run_episode`]; results produced by a benchmark carry
    /// the episode seed instead, which replays both task and pipeline.
    pub seed: u64,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
    pub revealed: Vec<(usize, usize)>,
    pub traces: Vec<RoundTrace>,
    pub weighted_accuracy: f64,
    pub class_recalls: Vec<Option<f64>>,
    pub reseeds: usize,
    pub fallbacks: usize,
}

/// Round-one picks, in cluster order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOneSelection {
    pub selected: Vec<usize>,
    pub substitutions: usize,
}

/// Most confident sample of every cluster (lowest index on ties). An empty
/// cluster contributes the globally most confident sample not yet picked.
pub fn select_round_one(model: &ClusterModel, scores: &ScoreTable) -> RoundOneSelection {
    let k = model.k();
    let mut picks: Vec<Option<usize>> = vec![None; k];
    for i in 0..model.n() {
        let c = model.hard[i];
        let better = match picks[c] {
            None => true,
            Some(j) => scores.confidence_order(i, j).is_lt(),
        };
        if better {
            picks[c] = Some(i);
        }
    }
    let mut taken: BTreeSet<usize> = picks.iter().flatten().copied().collect();
    let mut global: Vec<usize> = (0..model.n()).collect();
    global.sort_by(|&a, &b| scores.confidence_order(a, b));
    let mut substitutions = 0;
    let selected = picks
        .into_iter()
        .map(|pick| {
            pick.unwrap_or_else(|| {
                substitutions += 1;
                let sub = *global
                    .iter()
                    .find(|i| !taken.contains(i))
                    .expect("n >= K guarantees a free sample");
                taken.insert(sub);
                sub
            })
        })
        .collect();
    RoundOneSelection {
        selected,
        substitutions,
    }
}

/// The `batch` least confident samples outside `excluded`, lowest index on
/// ties.
pub fn select_uncertain(scores: &ScoreTable, batch: usize, excluded: &Constraints) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|i| !excluded.contains_key(i))
        .collect();
    candidates.sort_by(|&a, &b| scores.uncertainty_order(a, b));
    candidates.truncate(batch);
    candidates
}

fn most_confident(scores: &ScoreTable, count: usize, excluded: &Constraints) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|i| !excluded.contains_key(i))
        .collect();
    candidates.sort_by(|&a, &b| scores.confidence_order(a, b));
    candidates.truncate(count);
    candidates
}

fn trace(
    round_index: usize,
    strategy: &str,
    task: &TaskInstance,
    selected: Vec<usize>,
    scores: &ScoreTable,
    model: &ClusterModel,
    substitutions: usize,
) -> RoundTrace {
    RoundTrace {
        round_index,
        strategy: strategy.to_string(),
        selected_rows: selected.iter().map(|&i| task.sample_ids[i]).collect(),
        scores_at_selection: selected.iter().map(|&i| scores.assigned[i]).collect(),
        selected,
        objective: model.objective,
        centroid_checksum: model.centroids.sum(),
        substitutions,
    }
}

/// Runs one episode end to end. `task` should arrive with nothing revealed;
/// the labels revealed by the loop are recorded in it.
pub fn run_episode(
    bank: &FeatureBank,
    task: &mut TaskInstance,
    strategy: &dyn SelectionStrategy,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EpisodeResult, EpisodeError> {
    let (n, k) = (task.n(), task.k());
    if task.budget == 0 {
        return Err(EpisodeError::ZeroBudget);
    }
    if task.budget > n {
        return Err(EpisodeError::BudgetExceedsSamples {
            budget: task.budget,
            n,
        });
    }
    if k < 2 {
        return Err(EpisodeError::TooFewClasses(k));
    }

    let features = preprocess_episode(task.raw_features(bank).view(), &cfg.smoothing)?;
    let z = features.smoothed.view();
    let em = EmConfig {
        seed: derive_seed(seed, 1),
        ..cfg.em.clone()
    };
    let name = strategy.name().to_string();
    let mut traces = Vec::new();
    let mut reseeds = 0;
    let mut fallbacks = 0;

    let model = fit_random_multi(z, k, &em)?;
    reseeds += model.reseeds;
    let round_seed = |round: usize| derive_seed(seed, 100 + round as u64);

    let preselect_ctx = PreselectContext {
        features: z,
        truth: task.truth(),
        k,
        budget: task.budget,
        em: &em,
        seed: round_seed(0),
    };
    if let Some(chosen) = strategy.preselect(&preselect_ctx) {
        let chosen = chosen?;
        let scores = strategy.score(&ScoreContext {
            features: z,
            model: &model,
            seed: round_seed(0),
        });
        for &i in &chosen {
            task.reveal(bank, i)?;
        }
        traces.push(trace(0, &name, task, chosen, &scores, &model, 0));
    } else {
        let scores = strategy.score(&ScoreContext {
            features: z,
            model: &model,
            seed: round_seed(0),
        });
        fallbacks += scores.fallbacks;
        let batch = k.min(task.budget);
        let (mut selected, substitutions) = if strategy.stratified_first_round() {
            let pick = select_round_one(&model, &scores);
            (pick.selected, pick.substitutions)
        } else {
            (most_confident(&scores, batch, task.revealed()), 0)
        };
        if selected.len() > batch {
            selected.sort_by(|&a, &b| scores.confidence_order(a, b));
            selected.truncate(batch);
        }
        for &i in &selected {
            task.reveal(bank, i)?;
        }
        traces.push(trace(
            0,
            &name,
            task,
            selected,
            &scores,
            &model,
            substitutions,
        ));

        let mut round = 1;
        while task.remaining_budget() > 0 {
            let model = cluster_with_labels(z, k, task.revealed(), &em)?;
            reseeds += model.reseeds;
            let scores = strategy.score(&ScoreContext {
                features: z,
                model: &model,
                seed: round_seed(round),
            });
            fallbacks += scores.fallbacks;
            let batch = k.min(task.remaining_budget());
            let selected = select_uncertain(&scores, batch, task.revealed());
            for &i in &selected {
                task.reveal(bank, i)?;
            }
            traces.push(trace(round, &name, task, selected, &scores, &model, 0));
            round += 1;
        }
    }

    let final_model = cluster_with_labels(z, k, task.revealed(), &em)?;
    reseeds += final_model.reseeds;
    let mut predictions = final_model.hard.clone();
    for (&i, &c) in task.revealed() {
        predictions[i] = c;
    }
    let truth = task.truth().to_vec();
    let weighted = weighted_accuracy(&predictions, &truth, task.revealed(), k);
    let recalls = class_recalls(&predictions, &truth, task.revealed(), k);

    Ok(EpisodeResult {
        task_digest: task.digest(),
        strategy: name,
        seed,
        predictions,
        truth,
        revealed: task.revealed().iter().map(|(&i, &c)| (i, c)).collect(),
        traces,
        weighted_accuracy: weighted,
        class_recalls: recalls,
        reseeds,
        fallbacks,
    })
}
