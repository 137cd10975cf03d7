//! Episode-level feature preprocessing: centering, projection onto the unit
//! sphere, the directed k-nearest-neighbour cosine graph and power smoothing
//! `Z = (beta * I + A)^kappa * X`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("need at least 2 rows to center an episode, got {0}")]
    TooFewRows(usize),
    #[error("row {0} coincides with the episode mean and cannot be normalized")]
    DegenerateRow(usize),
    #[error("neighbour count {m} out of range for {n} samples (need 1 <= m <= n - 1)")]
    NeighborCount { m: usize, n: usize },
    #[error("adjacency has {adjacency} nodes but features have {rows} rows")]
    DimensionMismatch { adjacency: usize, rows: usize },
    #[error("smoothing overflowed at power {power} (beta = {beta}); try a smaller kappa")]
    NumericOverflow { power: u32, beta: f64 },
}

/// Graph smoothing hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Neighbours kept per vertex.
    pub m: usize,
    /// Self-loop weight.
    pub beta: f64,
    /// Power applied to `beta * I + A`. Zero disables smoothing.
    pub kappa: u32,
    /// Re-project smoothed rows onto the unit sphere.
    pub renormalize_after: bool,
}

/// Defaults come from a grid search over `m` in {3, 5, 10}, `beta` in
/// {1, 3, 10} and `kappa` in {1, 2, 3} on a held-out synthetic bank.
impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            m: 5,
            beta: 10.0,
            kappa: 2,
            renormalize_after: true,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 {
            return Err("smoothing.m must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err("smoothing.beta must be a nonnegative finite number".into());
        }
        Ok(())
    }
}

/// Row-wise (directed) binary adjacency stored as neighbour lists. Row `i`
/// lists its neighbours in decreasing similarity order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.neighbors[row]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.neighbors[row].contains(&col)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.len();
        let mut dense = Array2::zeros((n, n));
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                dense[[i, j]] = 1.0;
            }
        }
        dense
    }
}

/// The three matrices produced for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    /// Centered, unit-norm rows.
    pub normalized: Array2<f64>,
    /// `None` when `kappa == 0` (no graph is needed).
    pub adjacency: Option<Adjacency>,
    /// Smoothed features used by clustering and selection.
    pub smoothed: Array2<f64>,
}

/// Subtracts the column mean and scales every row to unit Euclidean norm.
pub fn center_and_normalize(raw: ArrayView2<'_, f64>) -> Result<Array2<f64>, PreprocessError> {
    let n = raw.nrows();
    if n < 2 {
        return Err(PreprocessError::TooFewRows(n));
    }
    let mean = raw.mean_axis(Axis(0)).expect("n >= 2");
    let mut out = &raw - &mean;
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < 1e-12 {
            return Err(PreprocessError::DegenerateRow(i));
        }
        row /= norm;
    }
    Ok(out)
}

/// Keeps, for every row, the `m` other rows with the largest cosine
/// similarity. Ties go to the lower index. Rows of `x` are assumed unit norm,
/// so cosine similarity is the dot product.
pub fn build_knn_graph(x: ArrayView2<'_, f64>, m: usize) -> Result<Adjacency, PreprocessError> {
    let n = x.nrows();
    if m == 0 || m >= n {
        return Err(PreprocessError::NeighborCount { m, n });
    }
    let gram = x.dot(&x.t());
    let neighbors = (0..n)
        .map(|i| {
            let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            candidates.sort_by(|&a, &b| {
                gram[[i, b]]
                    .total_cmp(&gram[[i, a]])
                    .then_with(|| a.cmp(&b))
            });
            candidates.truncate(m);
            candidates
        })
        .collect();
    Ok(Adjacency { neighbors })
}

/// Applies `(beta * I + A)` to `x` `kappa` times.
pub fn smooth(
    x: ArrayView2<'_, f64>,
    adjacency: &Adjacency,
    cfg: &SmoothingConfig,
) -> Result<Array2<f64>, PreprocessError> {
    if adjacency.len() != x.nrows() {
        return Err(PreprocessError::DimensionMismatch {
            adjacency: adjacency.len(),
            rows: x.nrows(),
        });
    }
    let mut z = x.to_owned();
    for power in 1..=cfg.kappa {
        let mut next = &z * cfg.beta;
        for (i, mut row) in next.outer_iter_mut().enumerate() {
            for &j in adjacency.neighbors(i) {
                row += &z.row(j);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NumericOverflow {
                power,
                beta: cfg.beta,
            });
        }
        z = next;
    }
    if cfg.renormalize_after {
        renormalize_rows(&mut z);
    }
    Ok(z)
}

/// Unit-normalizes rows in place; all-zero rows are left untouched.
fn renormalize_rows(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Full preprocessing for one episode. The neighbour count is clamped to
/// `n - 1` for episodes smaller than `m + 1`.
pub fn preprocess_episode(
    raw: ArrayView2<'_, f64>,
    cfg: &SmoothingConfig,
) -> Result<EpisodeFeatures, PreprocessError> {
    let normalized = center_and_normalize(raw)?;
    if cfg.kappa == 0 {
        let mut smoothed = normalized.clone();
        if cfg.renormalize_after {
            renormalize_rows(&mut smoothed);
        }
        return Ok(EpisodeFeatures {
            normalized,
            adjacency: None,
            smoothed,
        });
    }
    let m = cfg.m.min(normalized.nrows() - 1);
    let adjacency = build_knn_graph(normalized.view(), m)?;
    let smoothed = smooth(normalized.view(), &adjacency, cfg)?;
    Ok(EpisodeFeatures {
        normalized,
        adjacency: Some(adjacency),
        smoothed,
    })
}
