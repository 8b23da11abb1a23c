//! Feature standardization and k-means phenotype clustering.
//!
//! Each restart runs Lloyd's algorithm from `k` distinct random rows on its
//! own `(seed, restart)` stream, so restarts run in parallel without
//! changing the result. The lowest-WSS restart wins, ties going to the
//! earlier restart.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::substream;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("feature matrix is empty")]
    Empty,
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("non-finite value in column `{column}` for unit {unit}")]
    NonFinite { column: String, unit: String },
    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),
    #[error("k = {k} exceeds the {units} units available")]
    KExceedsUnits { k: usize, units: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("at least one restart is required")]
    NoRestarts,
    #[error("cluster {0} stayed empty after repair")]
    EmptyClusterUnrecoverable(usize),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("model does not match the feature matrix")]
    ModelMismatch,
}

/// Units × named features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub unit_ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub standardized: bool,
}

impl FeatureMatrix {
    pub fn new(
        unit_ids: Vec<String>,
        columns: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, ClusterError> {
        if values.is_empty() || columns.is_empty() {
            return Err(ClusterError::Empty);
        }
        for (row, (unit, v)) in unit_ids.iter().zip(&values).enumerate() {
            if v.len() != columns.len() {
                return Err(ClusterError::RaggedRow {
                    row,
                    got: v.len(),
                    expected: columns.len(),
                });
            }
            if let Some(c) = v.iter().position(|x| !x.is_finite()) {
                return Err(ClusterError::NonFinite {
                    column: columns[c].clone(),
                    unit: unit.clone(),
                });
            }
        }
        Ok(Self {
            unit_ids,
            columns,
            values,
            standardized: false,
        })
    }

    pub fn n_units(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |r| r[j])
    }
}

/// Column z-scores with the `n - 1` standard deviation.
pub fn standardize(features: &FeatureMatrix) -> Result<FeatureMatrix, ClusterError> {
    let n = features.n_units();
    let mut out = features.clone();
    for j in 0..features.n_features() {
        let mean = features.column(j).sum::<f64>() / n as f64;
        let var = if n > 1 {
            features.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        if !(sd > 0.0) || sd <= 1e-300 {
            return Err(ClusterError::ZeroVarianceColumn(features.columns[j].clone()));
        }
        for row in &mut out.values {
            row[j] = (row[j] - mean) / sd;
        }
    }
    out.standardized = true;
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// One Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    /// Zero-based cluster index per unit.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wss: f64,
    /// WSS after every iteration's centroid update.
    pub wss_trace: Vec<f64>,
    pub converged: bool,
}

fn centroids_of(x: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in x.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    sums
}

fn wss_of(x: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(assignments)
        .map(|(row, &c)| sq_dist(row, &centroids[c]))
        .sum()
}

/// Nearest centroid; the current label wins ties so a fixpoint is stable.
fn nearest(row: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = sq_dist(row, &centroids[best]);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd iterations from explicit starting centroids.
pub fn lloyd(x: &[Vec<f64>], initial: Vec<Vec<f64>>) -> Result<LloydRun, ClusterError> {
    let k = initial.len();
    let mut centroids = initial;
    let mut assignments: Vec<usize> = x.iter().map(|r| nearest(r, &centroids, None)).collect();
    let mut wss_trace = Vec::new();
    let mut converged = false;
    for iteration in 0..MAX_ITERATIONS {
        if iteration > 0 {
            let next: Vec<usize> = x
                .iter()
                .zip(&assignments)
                .map(|(r, &c)| nearest(r, &centroids, Some(c)))
                .collect();
            if next == assignments {
                converged = true;
                break;
            }
            assignments = next;
        }
        repair_empty(x, &mut assignments, &centroids, k)?;
        centroids = centroids_of(x, &assignments, k);
        wss_trace.push(wss_of(x, &assignments, &centroids));
    }
    Ok(LloydRun {
        wss: wss_of(x, &assignments, &centroids),
        assignments,
        centroids,
        wss_trace,
        converged,
    })
}

/// Moves, for each empty cluster, the point farthest from its own centroid
/// (taken from a cluster with at least two members) into the empty one.
fn repair_empty(
    x: &[Vec<f64>],
    assignments: &mut [usize],
    centroids: &[Vec<f64>],
    k: usize,
) -> Result<(), ClusterError> {
    let mut counts = vec![0usize; k];
    for &c in assignments.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..x.len())
            .filter(|&i| counts[assignments[i]] >= 2)
            .max_by(|&i, &j| {
                sq_dist(&x[i], &centroids[assignments[i]])
                    .total_cmp(&sq_dist(&x[j], &centroids[assignments[j]]))
                    .then(j.cmp(&i))
            })
            .ok_or(ClusterError::EmptyClusterUnrecoverable(empty + 1))?;
        counts[assignments[donor]] -= 1;
        assignments[donor] = empty;
        counts[empty] = 1;
    }
    Ok(())
}

/// Restart `restart` of a seeded k-means run.
pub fn kmeans_restart(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    restart: u64,
) -> Result<LloydRun, ClusterError> {
    let n = features.n_units();
    let mut rng = substream(seed, restart);
    // Partial Fisher-Yates: k distinct rows.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let initial = idx[..k].iter().map(|&i| features.values[i].clone()).collect();
    lloyd(&features.values, initial)
}

/// A fitted partition with labels `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub unit_ids: Vec<String>,
    /// Label in `1..=k` per unit, aligned with `unit_ids`.
    pub assignments: Vec<usize>,
    /// Row `c - 1` is the centroid of label `c`.
    pub centroids: Vec<Vec<f64>>,
    pub wss: f64,
    pub restarts: usize,
    pub seed: u64,
    pub converged: bool,
}

impl ClusterModel {
    pub fn label_of(&self, unit: &str) -> Option<usize> {
        self.unit_ids
            .iter()
            .position(|u| u == unit)
            .map(|i| self.assignments[i])
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a - 1] += 1;
        }
        sizes
    }
}

fn check_k(features: &FeatureMatrix, k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > features.n_units() {
        return Err(ClusterError::KExceedsUnits {
            k,
            units: features.n_units(),
        });
    }
    Ok(())
}

/// Best of `restarts` Lloyd runs. Labels are ordered by descending centroid
/// value in the `p_low` column (the first column if there is none).
pub fn kmeans(
    features: &FeatureMatrix,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterModel, ClusterError> {
    check_k(features, k)?;
    if restarts == 0 {
        return Err(ClusterError::NoRestarts);
    }
    let runs: Vec<LloydRun> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| kmeans_restart(features, k, seed, r))
        .collect::<Result<_, _>>()?;
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.wss < best.wss { run } else { best })
        .expect("at least one restart");

    let key = features.columns.iter().position(|c| c == "p_low").unwrap_or(0);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.centroids[b][key].total_cmp(&best.centroids[a][key]));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new + 1;
    }
    Ok(ClusterModel {
        k,
        unit_ids: features.unit_ids.clone(),
        assignments: best.assignments.iter().map(|&c| relabel[c]).collect(),
        centroids: order.iter().map(|&c| best.centroids[c].clone()).collect(),
        wss: best.wss,
        restarts,
        seed,
        converged: best.converged,
    })
}

/// Best-of-restarts WSS for each candidate `k`.
pub fn elbow_curve(
    features: &FeatureMatrix,
    k_values: &[usize],
    restarts: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    if k_values.is_empty() {
        return Err(ClusterError::ZeroK);
    }
    k_values
        .iter()
        .map(|&k| kmeans(features, k, restarts, seed).map(|m| (k, m.wss)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub mean: f64,
    pub widths: Vec<f64>,
}

/// Silhouette widths with Euclidean distance; singleton clusters score 0.
pub fn silhouette(features: &FeatureMatrix, model: &ClusterModel) -> Result<Silhouette, ClusterError> {
    if model.k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    if model.assignments.len() != features.n_units() {
        return Err(ClusterError::ModelMismatch);
    }
    let x = &features.values;
    let sizes = model.sizes();
    let widths: Vec<f64> = (0..x.len())
        .map(|i| {
            let own = model.assignments[i];
            if sizes[own - 1] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; model.k];
            for (j, row) in x.iter().enumerate() {
                if j != i {
                    sums[model.assignments[j] - 1] += sq_dist(&x[i], row).sqrt();
                }
            }
            let a = sums[own - 1] / (sizes[own - 1] - 1) as f64;
            let b = (0..model.k)
                .filter(|&c| c + 1 != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(Silhouette {
        mean: widths.iter().sum::<f64>() / widths.len() as f64,
        widths,
    })
}
