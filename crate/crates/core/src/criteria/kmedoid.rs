use ndarray::ArrayView2;

use super::{assigned_from, Direction, ScoreContext, ScoreTable, SelectionStrategy};
use crate::inference::{squared_distances, ClusterModel};

/// Euclidean distance of every sample to every centroid; the assigned score
/// is the distance to the sample's own centroid. Lower is more confident.
pub fn kmedoid_scores(z: ArrayView2<'_, f64>, model: &ClusterModel) -> ScoreTable {
    let per_cluster = squared_distances(z, model.centroids.view()).mapv(f64::sqrt);
    let assigned = assigned_from(&per_cluster, &model.hard);
    ScoreTable {
        per_cluster,
        assigned,
        direction: Direction::LowerIsConfident,
        fallbacks: 0,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KMedoid;

impl SelectionStrategy for KMedoid {
    fn name(&self) -> &str {
        "kmedoid"
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable {
        kmedoid_scores(ctx.features, ctx.model)
    }
}
