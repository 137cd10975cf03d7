//! Soft k-means (EM with isotropic memberships) and the two centroid
//! initialization schemes used by the active loop.
//!
//! Memberships follow `r[i][k] ∝ exp(-‖z_i - μ_k‖² / T)`; centroids are the
//! membership-weighted means. Samples with a revealed label are pinned to a
//! one-hot membership at their class in every E-step.
//!
//! Convergence is tracked on the soft k-means free energy
//! `Σ r_ik d_ik + T Σ r_ik ln r_ik`, which each E-step and each M-step can only
//! lower. The reported [`ClusterModel::objective`] is the hard objective
//! (sum of squared distances to the nearest centroid) used to compare restarts.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from_seed};

/// Revealed labels: episode sample index -> class (cluster) index.
pub type Constraints = BTreeMap<usize, usize>;

/// Total membership below which a cluster counts as empty.
const EMPTY_MASS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("{n} samples cannot fill {k} clusters")]
    TooFewSamples { n: usize, k: usize },
    #[error("sample {sample} constrained to class {class}, but only {k} clusters exist")]
    ConstraintOutOfRange {
        sample: usize,
        class: usize,
        k: usize,
    },
    #[error("initial centroids have shape {got:?}, expected {expected:?}")]
    InitShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("label-mean initialization needs at least one revealed label")]
    NoLabels,
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
}

/// Soft k-means settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Softness of memberships; smaller is closer to hard k-means.
    pub temperature: f64,
    pub max_iter: usize,
    /// Stop once the free energy changes by less than this.
    pub tol: f64,
    /// Random restarts for the unsupervised first clustering.
    pub n_init: usize,
    pub sigma_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_iter: 100,
            tol: 1e-6,
            n_init: 10,
            sigma_floor: 1e-6,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("em.temperature must be positive");
        }
        if self.max_iter == 0 {
            return bad("em.max_iter must be at least 1");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("em.tol must be positive");
        }
        if self.n_init == 0 {
            return bad("em.n_init must be at least 1");
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad("em.sigma_floor must be positive");
        }
        Ok(())
    }
}

/// Result of a soft k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// `K x d`.
    pub centroids: Array2<f64>,
    /// Per-cluster isotropic standard deviation, floored.
    pub scales: Array1<f64>,
    /// `n x K`, rows sum to one.
    pub assignments: Array2<f64>,
    /// Argmax of each assignment row, lowest index on ties.
    pub hard: Vec<usize>,
    /// Sum over samples of the squared distance to the nearest centroid.
    pub objective: f64,
    /// Free energy after each iteration.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    /// Number of empty-cluster reseeds performed.
    pub reseeds: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn n(&self) -> usize {
        self.assignments.nrows()
    }
}

/// `n x K` matrix of squared Euclidean distances.
pub fn squared_distances(z: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((z.nrows(), centroids.nrows()), |(i, k)| {
        z.row(i)
            .iter()
            .zip(centroids.row(k).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

fn memberships(dist: &Array2<f64>, temperature: f64, constraints: &Constraints) -> Array2<f64> {
    let mut r = Array2::zeros(dist.raw_dim());
    for (i, (drow, mut rrow)) in dist.outer_iter().zip(r.outer_iter_mut()).enumerate() {
        if let Some(&class) = constraints.get(&i) {
            rrow[class] = 1.0;
            continue;
        }
        let dmin = drow.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (out, &d) in rrow.iter_mut().zip(drow.iter()) {
            *out = (-(d - dmin) / temperature).exp();
            total += *out;
        }
        rrow /= total;
    }
    r
}

/// One E-step: soft memberships of every sample given fixed centroids.
pub fn e_step(
    z: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    temperature: f64,
    constraints: &Constraints,
) -> Array2<f64> {
    memberships(&squared_distances(z, centroids), temperature, constraints)
}

/// Row-wise argmax, lowest index on ties.
pub fn hard_assignments(assignments: &Array2<f64>) -> Vec<usize> {
    assignments
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn nearest(dist: &Array2<f64>) -> Vec<usize> {
    dist.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn free_energy(dist: &Array2<f64>, r: &Array2<f64>, temperature: f64) -> f64 {
    dist.iter()
        .zip(r.iter())
        .map(|(&d, &p)| {
            let entropy = if p > 0.0 {
                temperature * p * p.ln()
            } else {
                0.0
            };
            p * d + entropy
        })
        .sum()
}

fn check_inputs(n: usize, k: usize, constraints: &Constraints) -> Result<(), InferenceError> {
    if k < 2 {
        return Err(InferenceError::TooFewClusters(k));
    }
    if n < k {
        return Err(InferenceError::TooFewSamples { n, k });
    }
    if let Some((&sample, &class)) = constraints.iter().find(|(&s, &c)| c >= k || s >= n) {
        return Err(InferenceError::ConstraintOutOfRange { sample, class, k });
    }
    Ok(())
}

/// Runs soft k-means from `init_centroids`.
///
/// A cluster whose total membership drops below `1e-12` is reseeded at the
/// sample farthest from its current centroid; the run continues and the event
/// is counted in [`ClusterModel::reseeds`].
pub fn soft_kmeans(
    z: ArrayView2<'_, f64>,
    k: usize,
    init_centroids: ArrayView2<'_, f64>,
    constraints: &Constraints,
    cfg: &EmConfig,
) -> Result<ClusterModel, InferenceError> {
    cfg.validate()?;
    let (n, d) = z.dim();
    check_inputs(n, k, constraints)?;
    if init_centroids.dim() != (k, d) {
        return Err(InferenceError::InitShape {
            got: init_centroids.dim(),
            expected: (k, d),
        });
    }

    let mut centroids = init_centroids.to_owned();
    let mut energy_trace = Vec::new();
    let mut reseeds = 0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let r = e_step(z, centroids.view(), cfg.temperature, constraints);

        let mass = r.sum_axis(ndarray::Axis(0));
        let mut next = r.t().dot(&z);
        let mut empty = Vec::new();
        for (kk, mut row) in next.outer_iter_mut().enumerate() {
            if mass[kk] < EMPTY_MASS {
                empty.push(kk);
            } else {
                row /= mass[kk];
            }
        }
        if !empty.is_empty() {
            reseed(z, &centroids, &mut next, &empty);
            reseeds += empty.len();
        }
        centroids = next;

        let energy = free_energy(&squared_distances(z, centroids.view()), &r, cfg.temperature);
        let converged = energy_trace
            .last()
            .is_some_and(|&prev: &f64| (prev - energy).abs() < cfg.tol);
        energy_trace.push(energy);
        if converged && empty.is_empty() {
            break;
        }
    }

    let dist = squared_distances(z, centroids.view());
    let assignments = memberships(&dist, cfg.temperature, constraints);
    let hard = hard_assignments(&assignments);
    let objective = nearest(&dist)
        .iter()
        .enumerate()
        .map(|(i, &kk)| dist[[i, kk]])
        .sum();
    let mut model = ClusterModel {
        scales: Array1::from_elem(k, cfg.sigma_floor),
        centroids,
        assignments,
        hard,
        objective,
        energy_trace,
        iterations,
        reseeds,
    };
    let (_, scales) = estimate_class_stats(z, &model, cfg.sigma_floor);
    model.scales = scales;
    Ok(model)
}

fn reseed(z: ArrayView2<'_, f64>, current: &Array2<f64>, next: &mut Array2<f64>, empty: &[usize]) {
    let dist = squared_distances(z, current.view());
    let near = nearest(&dist);
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    // Farthest first, lowest index among equals.
    order.sort_by(|&a, &b| {
        dist[[b, near[b]]]
            .total_cmp(&dist[[a, near[a]]])
            .then(a.cmp(&b))
    });
    for (&cluster, &sample) in empty.iter().zip(order.iter().cycle()) {
        next.row_mut(cluster).assign(&z.row(sample));
    }
}

/// Runs `n_init` seeded restarts from distinct random sample rows and returns
/// the converged model with the smallest hard objective (earliest restart on
/// ties).
pub fn fit_random_multi(
    z: ArrayView2<'_, f64>,
    k: usize,
    cfg: &EmConfig,
) -> Result<ClusterModel, InferenceError> {
    cfg.validate()?;
    let n = z.nrows();
    check_inputs(n, k, &Constraints::new())?;
    let mut best: Option<ClusterModel> = None;
    for restart in 0..cfg.n_init {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, restart as u64));
        let rows = rand::seq::index::sample(&mut rng, n, k);
        let init = Array2::from_shape_fn((k, z.ncols()), |(c, j)| z[[rows.index(c), j]]);
        let model = soft_kmeans(z, k, init.view(), &Constraints::new(), cfg)?;
        if best.as_ref().is_none_or(|b| model.objective < b.objective) {
            best = Some(model);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Centroids of the best of `n_init` random restarts.
pub fn init_random_multi(
    z: ArrayView2<'_, f64>,
    k: usize,
    cfg: &EmConfig,
) -> Result<Array2<f64>, InferenceError> {
    fit_random_multi(z, k, cfg).map(|m| m.centroids)
}

/// Centroid `k` is the mean of the rows revealed as class `k`, or the zero
/// vector when class `k` has no revealed rows.
pub fn init_from_labels(
    z: ArrayView2<'_, f64>,
    k: usize,
    revealed: &Constraints,
) -> Result<Array2<f64>, InferenceError> {
    if revealed.is_empty() {
        return Err(InferenceError::NoLabels);
    }
    check_inputs(z.nrows(), k.max(2), revealed)?;
    let mut sums = Array2::<f64>::zeros((k, z.ncols()));
    let mut counts = vec![0usize; k];
    for (&sample, &class) in revealed {
        let mut row = sums.row_mut(class);
        row += &z.row(sample);
        counts[class] += 1;
    }
    for (mut row, &count) in sums.outer_iter_mut().zip(&counts) {
        if count > 0 {
            row /= count as f64;
        }
    }
    Ok(sums)
}

/// Constrained soft k-means started from the label means. Deterministic: it
/// does not use `cfg.seed`.
pub fn cluster_with_labels(
    z: ArrayView2<'_, f64>,
    k: usize,
    revealed: &Constraints,
    cfg: &EmConfig,
) -> Result<ClusterModel, InferenceError> {
    let init = init_from_labels(z, k, revealed)?;
    soft_kmeans(z, k, init.view(), revealed, cfg)
}

/// Per-cluster mean and isotropic standard deviation over hard clusters.
///
/// The scale is `sqrt(Σ‖z - μ̂‖² / (|C_k| d))`, floored at `sigma_floor`. An
/// empty cluster keeps its centroid as mean and gets the floor as scale.
pub fn estimate_class_stats(
    z: ArrayView2<'_, f64>,
    model: &ClusterModel,
    sigma_floor: f64,
) -> (Array2<f64>, Array1<f64>) {
    let k = model.k();
    let d = z.ncols();
    let mut means = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &c) in model.hard.iter().enumerate() {
        let mut row = means.row_mut(c);
        row += &z.row(i);
        counts[c] += 1;
    }
    for (c, mut row) in means.outer_iter_mut().enumerate() {
        if counts[c] == 0 {
            row.assign(&model.centroids.row(c));
        } else {
            row /= counts[c] as f64;
        }
    }
    let mut spread = vec![0.0; k];
    for (i, &c) in model.hard.iter().enumerate() {
        spread[c] += z
            .row(i)
            .iter()
            .zip(means.row(c).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let scales = Array1::from_iter((0..k).map(|c| {
        if counts[c] == 0 {
            sigma_floor
        } else {
            (spread[c] / (counts[c] * d) as f64).sqrt().max(sigma_floor)
        }
    }));
    (means, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn cfg() -> EmConfig {
        EmConfig::default()
    }

    /// Plain Lloyd iterations, used as an independent reference.
    fn lloyd(points: &[[f64; 2]], mut centers: Vec<[f64; 2]>, iters: usize) -> Vec<usize> {
        let mut labels = vec![0; points.len()];
        for _ in 0..iters {
            for (i, p) in points.iter().enumerate() {
                let d = |c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                labels[i] = (0..centers.len())
                    .min_by(|&a, &b| d(&centers[a]).total_cmp(&d(&centers[b])))
                    .unwrap();
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<_> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(p, _)| p)
                    .collect();
                if !members.is_empty() {
                    let len = members.len() as f64;
                    *center = [
                        members.iter().map(|p| p[0]).sum::<f64>() / len,
                        members.iter().map(|p| p[1]).sum::<f64>() / len,
                    ];
                }
            }
        }
        labels
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let pts = [
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [0.1, 0.1],
            [0.05, 0.05],
            [5.0, 5.0],
            [5.1, 5.0],
            [5.0, 5.1],
            [5.1, 5.1],
            [5.05, 5.05],
        ];
        let z = Array2::from_shape_fn((10, 2), |(i, j)| pts[i][j]);
        let init = array![[0.0, 0.0], [5.0, 5.0]];
        let model = soft_kmeans(z.view(), 2, init.view(), &Constraints::new(), &cfg()).unwrap();
        let reference = lloyd(&pts, vec![[0.0, 0.0], [5.0, 5.0]], 10);
        assert_eq!(model.hard, reference);
        assert_eq!(model.hard, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn points_as_their_own_centroids_are_a_fixed_point() {
        let z = array![[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let model = soft_kmeans(z.view(), 3, z.view(), &Constraints::new(), &cfg()).unwrap();
        for (a, b) in model.centroids.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(model.objective < 1e-20);
    }

    #[test]
    fn fully_constrained_gives_class_means() {
        let z = array![[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, 3.0]];
        let constraints: Constraints = [(0, 0), (1, 0), (2, 1), (3, 1)].into_iter().collect();
        let init = array![[9.0, 9.0], [-9.0, 4.0]];
        let one = EmConfig {
            max_iter: 1,
            ..cfg()
        };
        let model = soft_kmeans(z.view(), 2, init.view(), &constraints, &one).unwrap();
        assert_eq!(model.centroids, array![[1.0, 0.0], [1.0, 2.0]]);
        assert_eq!(model.hard, vec![0, 0, 1, 1]);
        let full = soft_kmeans(z.view(), 2, init.view(), &constraints, &cfg()).unwrap();
        assert_eq!(full.centroids, model.centroids);
        assert_eq!(full.iterations, 2);
    }

    #[test]
    fn constraint_out_of_range() {
        let z = array![[0.0], [1.0], [2.0]];
        let constraints: Constraints = [(0, 5)].into_iter().collect();
        let err = soft_kmeans(
            z.view(),
            2,
            array![[0.0], [1.0]].view(),
            &constraints,
            &cfg(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            InferenceError::ConstraintOutOfRange {
                sample: 0,
                class: 5,
                k: 2
            }
        );
        assert_eq!(
            soft_kmeans(
                z.view(),
                1,
                array![[0.0]].view(),
                &Constraints::new(),
                &cfg()
            )
            .unwrap_err(),
            InferenceError::TooFewClusters(1)
        );
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let z = array![[0.0, 0.0], [0.1, 0.0], [1.0, 0.0], [1.1, 0.0]];
        let init = array![[0.5, 0.0], [1000.0, 1000.0]];
        let model = soft_kmeans(z.view(), 2, init.view(), &Constraints::new(), &cfg()).unwrap();
        assert!(model.reseeds >= 1);
        assert!(model.centroids.iter().all(|v| v.abs() < 10.0));
        let mut hard = model.hard.clone();
        hard.dedup();
        assert_eq!(hard.len(), 2);
    }

    #[test]
    fn random_multi_is_deterministic_and_minimal() {
        let mut rng = rng_from_seed(5);
        let z = Array2::from_shape_fn((30, 3), |(i, _)| {
            (if i < 15 { 1.0 } else { -1.0 }) + rng.random_range(-0.3..0.3)
        });
        let c = EmConfig {
            n_init: 16,
            seed: 9,
            ..cfg()
        };
        let best = fit_random_multi(z.view(), 2, &c).unwrap();
        assert_eq!(init_random_multi(z.view(), 2, &c).unwrap(), best.centroids);
        for restart in 0..16 {
            let mut rng = rng_from_seed(derive_seed(9, restart));
            let rows = rand::seq::index::sample(&mut rng, 30, 2);
            let init = Array2::from_shape_fn((2, 3), |(r, j)| z[[rows.index(r), j]]);
            let single = soft_kmeans(z.view(), 2, init.view(), &Constraints::new(), &c).unwrap();
            assert!(best.objective <= single.objective);
        }
        let one = EmConfig { n_init: 1, ..c };
        let mut rng = rng_from_seed(derive_seed(9, 0));
        let rows = rand::seq::index::sample(&mut rng, 30, 2);
        let init = Array2::from_shape_fn((2, 3), |(r, j)| z[[rows.index(r), j]]);
        let single = soft_kmeans(z.view(), 2, init.view(), &Constraints::new(), &one).unwrap();
        assert_eq!(fit_random_multi(z.view(), 2, &one).unwrap(), single);
    }

    #[test]
    fn label_means() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [3.0, 1.0], [-1.0, -1.0]];
        let one_each: Constraints = [(0, 0), (1, 1), (3, 2)].into_iter().collect();
        let c = init_from_labels(z.view(), 3, &one_each).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]);

        let missing: Constraints = [(0, 0), (2, 0), (1, 1)].into_iter().collect();
        let c = init_from_labels(z.view(), 3, &missing).unwrap();
        assert_eq!(c, array![[2.0, 0.5], [0.0, 1.0], [0.0, 0.0]]);

        assert_eq!(
            init_from_labels(z.view(), 3, &Constraints::new()).unwrap_err(),
            InferenceError::NoLabels
        );
    }

    fn model_with(hard: Vec<usize>, centroids: Array2<f64>) -> ClusterModel {
        let n = hard.len();
        let k = centroids.nrows();
        let assignments = Array2::from_shape_fn((n, k), |(i, c)| (hard[i] == c) as u8 as f64);
        ClusterModel {
            scales: Array1::ones(k),
            centroids,
            assignments,
            hard,
            objective: 0.0,
            energy_trace: vec![],
            iterations: 0,
            reseeds: 0,
        }
    }

    #[test]
    fn class_stats() {
        let z = array![[0.0, 0.0], [2.0, 0.0], [4.0, 4.0], [4.0, 4.0], [7.0, 7.0]];
        let model = model_with(vec![0, 0, 1, 1, 2], Array2::from_elem((4, 2), 9.0));
        let (means, scales) = estimate_class_stats(z.view(), &model, 1e-6);
        assert_eq!(means.row(0).to_vec(), vec![1.0, 0.0]);
        assert!((scales[0] - 0.5f64.sqrt()).abs() < 1e-15);
        // identical points and singletons hit the floor
        assert_eq!(scales[1], 1e-6);
        assert_eq!(means.row(2).to_vec(), vec![7.0, 7.0]);
        assert_eq!(scales[2], 1e-6);
        // empty cluster keeps its centroid
        assert_eq!(means.row(3).to_vec(), vec![9.0, 9.0]);
        assert_eq!(scales[3], 1e-6);
    }
}
