//! Factor standardization, covariance fitting and centroid distances.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_SCAN_THRESHOLD: f64 = 3.0;
/// Ridged covariances with a larger eigenvalue ratio are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("covariance is numerically singular (condition {condition:.3e}); raise the ridge")]
    SingularCovariance { condition: f64 },
    #[error("ridge must be finite and nonnegative, got {0}")]
    InvalidRidge(f64),
    #[error("threshold must be finite and positive, got {0}")]
    InvalidThreshold(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Mahalanobis,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Mahalanobis => "mahalanobis",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "mahalanobis" => Ok(Metric::Mahalanobis),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// Per-column affine transform `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.scales[j]
        })
    }
}

/// Centers each column and divides by its sample standard deviation.
///
/// Constant columns are mapped to exact zeros with scale 1.
pub fn standardize(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Standardization), MetricsError> {
    let n = x.nrows();
    if n < 2 {
        return Err(MetricsError::TooFewRows { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            means.push(first);
            scales.push(1.0);
            continue;
        }
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        means.push(mean);
        scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    let s = Standardization { means, scales };
    Ok((s.apply(x), s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub center: DVector<f64>,
    /// Sample covariance with `ridge` already added to the diagonal.
    pub covariance: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub ridge: f64,
}

impl CovarianceModel {
    /// Builds a model from a known center and covariance (ridge added here).
    pub fn from_parts(
        center: DVector<f64>,
        covariance: DMatrix<f64>,
        ridge: f64,
    ) -> Result<Self, MetricsError> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(MetricsError::InvalidRidge(ridge));
        }
        let m = center.len();
        if covariance.shape() != (m, m) {
            return Err(MetricsError::DimensionMismatch {
                expected: m,
                got: covariance.nrows(),
            });
        }
        let covariance = covariance + DMatrix::identity(m, m) * ridge;
        let eig = SymmetricEigen::new(covariance.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if condition.is_nan() || condition > MAX_CONDITION {
            return Err(MetricsError::SingularCovariance { condition });
        }
        let inverse = covariance
            .clone()
            .cholesky()
            .ok_or(MetricsError::SingularCovariance { condition })?
            .inverse();
        Ok(Self {
            center,
            covariance,
            inverse,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Quadratic form `dᵀ·inverse·d`, clamped at zero.
    fn quad(&self, d: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, di) in d.iter().enumerate() {
            let row: f64 = d.iter().enumerate().map(|(j, dj)| self.inverse[(i, j)] * dj).sum();
            acc += di * row;
        }
        acc.max(0.0)
    }

    /// Mahalanobis distance between two arbitrary points under this covariance.
    pub fn distance_between(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.quad(&d).sqrt()
    }
}

/// Column means plus `ridge·I`-regularized sample covariance (n−1 denominator).
pub fn fit_covariance(z: &DMatrix<f64>, ridge: f64) -> Result<CovarianceModel, MetricsError> {
    let (n, m) = z.shape();
    if n < 2 {
        return Err(MetricsError::TooFewRows { needed: 2, got: n });
    }
    let center = DVector::from_iterator(m, z.column_iter().map(|c| c.mean()));
    let mut cov = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let s: f64 = (0..n)
                .map(|i| (z[(i, a)] - center[a]) * (z[(i, b)] - center[b]))
                .sum::<f64>()
                / (n - 1) as f64;
            cov[(a, b)] = s;
            cov[(b, a)] = s;
        }
    }
    CovarianceModel::from_parts(center, cov, ridge)
}

/// `sqrt((x − center)ᵀ · inverse · (x − center))`.
pub fn mahalanobis(model: &CovarianceModel, x: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(model.center.iter()).map(|(a, c)| a - c).collect();
    model.quad(&d).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Result of the centroid distance pre-scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierScan {
    pub distances: Vec<f64>,
    pub threshold: f64,
    /// Mean and sample standard deviation of `distances`.
    pub mean: f64,
    pub sd: f64,
    pub flags: Vec<bool>,
}

impl OutlierScan {
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

pub(crate) fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Flags rows whose distance to the centroid exceeds
/// `mean(distances) + threshold · sd(distances)`.
pub fn centroid_scan(
    x: &DMatrix<f64>,
    metric: Metric,
    threshold: f64,
    ridge: f64,
) -> Result<OutlierScan, MetricsError> {
    let (n, m) = x.shape();
    if n < 3 {
        return Err(MetricsError::TooFewRows { needed: 3, got: n });
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(MetricsError::InvalidRidge(ridge));
    }
    let distances: Vec<f64> = match metric {
        Metric::Mahalanobis => {
            let model = fit_covariance(x, ridge)?;
            (0..n).map(|i| mahalanobis(&model, &row(x, i))).collect()
        }
        Metric::Euclidean => {
            let center: Vec<f64> = (0..m).map(|j| x.column(j).mean()).collect();
            (0..n).map(|i| euclidean(&row(x, i), &center)).collect()
        }
    };
    let mean = distances.iter().sum::<f64>() / n as f64;
    let sd = (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let cutoff = mean + threshold * sd;
    let flags = distances.iter().map(|&d| d > cutoff).collect();
    Ok(OutlierScan {
        distances,
        threshold,
        mean,
        sd,
        flags,
    })
}
