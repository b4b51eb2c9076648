//! DBSCAN over the standardized factor matrix.
//!
//! Conventions: a neighborhood is closed (`distance <= eps`) and includes the
//! point itself when counted against `min_pts`. Seeds are visited in row
//! order and each cluster is fully expanded before the next seed is tried, so
//! a border point reachable from several clusters joins the lowest-numbered
//! one. Output depends on row order and on nothing else.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{euclidean, row, CovarianceModel, Metric};

/// Label of points that belong to no cluster.
pub const NOISE: i64 = -1;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("eps must be finite and positive, got {0}")]
    InvalidEps(f64),
    #[error("min_pts must be at least 1")]
    InvalidMinPts,
    #[error("mahalanobis metric requires a covariance model")]
    MissingCovariance,
    #[error("covariance model has dimension {model}, data has {data} columns")]
    DimensionMismatch { model: usize, data: usize },
    #[error("k = {k} must be smaller than the number of points {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    KTooSmall,
    #[error("parameter suggestion needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("label {label} at row {row} is neither NOISE nor a cluster id below {k}")]
    InvalidLabel { row: usize, label: i64, k: usize },
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
    pub metric: Metric,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize, metric: Metric) -> Result<Self, ClusteringError> {
        let p = Self { eps, min_pts, metric };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(ClusteringError::InvalidEps(self.eps));
        }
        if self.min_pts == 0 {
            return Err(ClusteringError::InvalidMinPts);
        }
        Ok(())
    }
}

/// Per-row cluster labels: [`NOISE`] or an id in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<i64>,
    k: usize,
}

impl ClusterAssignment {
    /// Checks that labels are NOISE or `0..k` and that every id is used.
    pub fn new(labels: Vec<i64>, k: usize) -> Result<Self, ClusteringError> {
        let mut used = vec![false; k];
        for (row, &label) in labels.iter().enumerate() {
            if label == NOISE {
                continue;
            }
            if label < 0 || label as usize >= k {
                return Err(ClusteringError::InvalidLabel { row, label, k });
            }
            used[label as usize] = true;
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return Err(ClusteringError::EmptyCluster(j));
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn members(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == j as i64)
            .map(|(i, _)| i)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            if l != NOISE {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Pairwise distance under the chosen metric.
#[derive(Debug, Clone, Copy)]
pub enum PointDistance<'a> {
    Euclidean,
    Mahalanobis(&'a CovarianceModel),
}

impl<'a> PointDistance<'a> {
    pub fn resolve(
        metric: Metric,
        cov: Option<&'a CovarianceModel>,
        dim: usize,
    ) -> Result<Self, ClusteringError> {
        match metric {
            Metric::Euclidean => Ok(PointDistance::Euclidean),
            Metric::Mahalanobis => {
                let model = cov.ok_or(ClusteringError::MissingCovariance)?;
                if model.dim() != dim {
                    return Err(ClusteringError::DimensionMismatch {
                        model: model.dim(),
                        data: dim,
                    });
                }
                Ok(PointDistance::Mahalanobis(model))
            }
        }
    }

    pub fn between(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            PointDistance::Euclidean => euclidean(a, b),
            PointDistance::Mahalanobis(model) => model.distance_between(a, b),
        }
    }
}

fn rows_of(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..z.nrows()).map(|i| row(z, i)).collect()
}

fn neighbors(points: &[Vec<f64>], i: usize, eps: f64, dist: PointDistance<'_>) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| dist.between(&points[i], p) <= eps)
        .map(|(j, _)| j)
        .collect()
}

pub fn dbscan(
    z: &DMatrix<f64>,
    params: &DbscanParams,
    cov: Option<&CovarianceModel>,
) -> Result<ClusterAssignment, ClusteringError> {
    params.validate()?;
    let dist = PointDistance::resolve(params.metric, cov, z.ncols())?;
    let points = rows_of(z);
    let n = points.len();
    let eps = params.eps;

    // Core status only needs counts; neighbor lists are rebuilt on expansion
    // so memory stays O(n).
    let core: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| {
            points
                .iter()
                .filter(|p| dist.between(&points[i], p) <= eps)
                .count()
                >= params.min_pts
        })
        .collect();

    let mut labels = vec![NOISE; n];
    let mut k = 0usize;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        let id = k as i64;
        k += 1;
        labels[seed] = id;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(&points, p, eps, dist) {
                if labels[q] != NOISE {
                    continue;
                }
                labels[q] = id;
                if core[q] {
                    queue.push_back(q);
                }
            }
        }
    }
    ClusterAssignment::new(labels, k)
}

/// Distance from every point to its k-th nearest other point, ascending.
pub fn k_distance_profile(
    z: &DMatrix<f64>,
    k: usize,
    metric: Metric,
    cov: Option<&CovarianceModel>,
) -> Result<Vec<f64>, ClusteringError> {
    let n = z.nrows();
    if k == 0 {
        return Err(ClusteringError::KTooSmall);
    }
    if k >= n {
        return Err(ClusteringError::KTooLarge { k, n });
    }
    let dist = PointDistance::resolve(metric, cov, z.ncols())?;
    let points = rows_of(z);
    let mut profile: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist.between(&points[i], &points[j]))
                .collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect();
    profile.sort_by(f64::total_cmp);
    Ok(profile)
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 1]`.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const SUGGEST_PERCENTILE: f64 = 0.9;

/// Heuristic starting point: `min_pts = m + 1`, `eps` = 90th percentile of
/// the `min_pts`-distance profile.
pub fn suggest_params(
    z: &DMatrix<f64>,
    metric: Metric,
    cov: Option<&CovarianceModel>,
) -> Result<DbscanParams, ClusteringError> {
    let (n, m) = z.shape();
    let needed = 2 * m + 2;
    if n < needed {
        return Err(ClusteringError::TooFewPoints { needed, got: n });
    }
    let min_pts = m + 1;
    let profile = k_distance_profile(z, min_pts, metric, cov)?;
    let mut eps = percentile_sorted(&profile, SUGGEST_PERCENTILE);
    if eps <= 0.0 {
        // Heavily duplicated data; any positive radius keeps the duplicates together.
        eps = f64::MIN_POSITIVE;
    }
    DbscanParams::new(eps, min_pts, metric)
}
