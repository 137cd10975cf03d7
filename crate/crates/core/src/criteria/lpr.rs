//! Log-probability-ratio scores (LSS).

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{assigned_from, Direction, ScoreContext, ScoreTable, SelectionStrategy};
use crate::inference::{squared_distances, ClusterModel};

/// Denominator magnitude below which the full form is considered undefined.
const DENOMINATOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LprMode {
    /// Constant scale for every class: `‖z-μ_k‖² / Σ_i ‖z-μ_i‖²`.
    Simplified,
    /// Per-class Gaussian log densities with `a_k = ln(1/(√(2π) σ_k))` and
    /// `b_k = 1/(2σ_k)`.
    Full,
}

fn simplified_row(dist: &[f64], out: &mut [f64]) {
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        for (o, d) in out.iter_mut().zip(dist) {
            *o = d / total;
        }
    } else {
        // z coincides with every centroid.
        out.fill(1.0 / dist.len() as f64);
    }
}

/// Per-cluster lpr values. Lower means more confident.
pub fn lpr_scores(z: ArrayView2<'_, f64>, model: &ClusterModel, mode: LprMode) -> ScoreTable {
    let dist = squared_distances(z, model.centroids.view());
    let (n, k) = dist.dim();
    let mut per_cluster = Array2::zeros((n, k));
    let mut fallbacks = 0;
    let (a, b): (Vec<f64>, Vec<f64>) = model
        .scales
        .iter()
        .map(|&s| ((1.0 / ((2.0 * PI).sqrt() * s)).ln(), 1.0 / (2.0 * s)))
        .unzip();
    for i in 0..n {
        let drow = dist.row(i).to_vec();
        let mut out = vec![0.0; k];
        match mode {
            LprMode::Simplified => simplified_row(&drow, &mut out),
            LprMode::Full => {
                let logp: Vec<f64> = (0..k).map(|c| a[c] - b[c] * drow[c]).collect();
                let total: f64 = logp.iter().sum();
                if total.abs() < DENOMINATOR_EPS || !total.is_finite() {
                    fallbacks += 1;
                    simplified_row(&drow, &mut out);
                } else {
                    for (o, lp) in out.iter_mut().zip(&logp) {
                        *o = lp / total;
                    }
                }
            }
        }
        per_cluster
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&out));
    }
    let assigned = assigned_from(&per_cluster, &model.hard);
    ScoreTable {
        per_cluster,
        assigned,
        direction: Direction::LowerIsConfident,
        fallbacks,
    }
}

/// Log-probs soft k-means sampling.
#[derive(Debug, Clone, Copy)]
pub struct Lss {
    mode: LprMode,
}

impl Lss {
    pub fn new(mode: LprMode) -> Self {
        Self { mode }
    }
}

impl SelectionStrategy for Lss {
    fn name(&self) -> &str {
        match self.mode {
            LprMode::Simplified => "lss",
            LprMode::Full => "lss-full",
        }
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> ScoreTable {
        lpr_scores(ctx.features, ctx.model, self.mode)
    }
}
