use ndarray::Array2;
use rand::Rng;

use super::{Direction, ScoreContext, ScoreTable, SelectionStrategy};
use crate::seed::rng_from_seed;

/// Seeded uniform scores, independent of any clustering. The score table has a
/// single column.
pub fn random_scores(n: usize, seed: u64) -> ScoreTable {
    let mut rng = rng_from_seed(seed);
    let assigned: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    ScoreTable {
        per_cluster: Array2::from_shape_vec((n, 1), assigned.clone()).expect("n x 1"),
        assigned,
        direction: Direction::HigherIsConfident,
        fallbacks: 0,
    }
}

/// Uniformly random labelling, the baseline every active criterion is
/// compared against. Labels are drawn without regard to clusters.
#[derive(Debug, Clone, Copy)]
pub struct RandomSelection;

impl SelectionStrategy for RandomSelection {
    fn name(&self) -> &str {
        "random"
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable {
        random_scores(ctx.features.nrows(), ctx.seed)
    }

    fn stratified_first_round(&self) -> bool {
        false
    }
}
