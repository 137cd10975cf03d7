use ndarray::Array2;

use super::{assigned_from, Direction, ScoreContext, ScoreTable, SelectionStrategy};
use crate::inference::ClusterModel;

/// Membership margin. `per_cluster[i][k] = p_ik - max_{j != k} p_ij`, so at the
/// hard cluster it is the gap between the two largest memberships.
pub fn margin_scores(model: &ClusterModel) -> ScoreTable {
    let p = &model.assignments;
    let (n, k) = p.dim();
    let mut per_cluster = Array2::zeros((n, k));
    for (i, row) in p.outer_iter().enumerate() {
        for c in 0..k {
            let best_other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != c)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            per_cluster[[i, c]] = row[c] - best_other;
        }
    }
    let assigned = assigned_from(&per_cluster, &model.hard);
    ScoreTable {
        per_cluster,
        assigned,
        direction: Direction::HigherIsConfident,
        fallbacks: 0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Margin;

impl SelectionStrategy for Margin {
    fn name(&self) -> &str {
        "margin"
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable {
        margin_scores(ctx.model)
    }
}
