//! End-to-end stratified analysis and its report formats.
//!
//! standardize → optional centroid scan → DBSCAN → per-cluster ICER and
//! bootstrap variance → weighted overall ICER and variance.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    dbscan, suggest_params, ClusterAssignment, ClusteringError, DbscanParams, NOISE,
};
use crate::dataset::{factor_matrix, TrialDataset};
use crate::icer::{
    bootstrap_cluster_variance, cluster_icer, icer_variance, naive_icer, overall_icer, ClusterIcer,
    IcerError, IcerValue, VarianceValue, WeightingMode, DEFAULT_EFF_FLOOR,
};
use crate::metrics::{
    centroid_scan, fit_covariance, standardize, Metric, MetricsError, Standardization,
    DEFAULT_RIDGE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Icer(#[from] IcerError),
    #[error("AllNoise: DBSCAN labeled all {0} patients as noise")]
    AllNoise(usize),
    #[error("cluster {cluster} excluded ({status:?}) in strict mode")]
    ClusterExcluded {
        cluster: usize,
        status: crate::icer::ClusterStatus,
    },
    #[error("{0}")]
    InvalidConfig(String),
}

/// How DBSCAN parameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ParamChoice {
    Auto,
    Manual { eps: f64, min_pts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub metric: Metric,
    pub params: ParamChoice,
    /// Centroid pre-scan threshold in standard deviations; `None` disables the scan.
    pub scan_threshold: Option<f64>,
    pub ridge: f64,
    pub eff_floor: f64,
    pub weighting: WeightingMode,
    /// Bootstrap replicates per cluster; 0 skips the bootstrap.
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            params: ParamChoice::Auto,
            scan_threshold: None,
            ridge: DEFAULT_RIDGE,
            eff_floor: DEFAULT_EFF_FLOOR,
            weighting: WeightingMode::PaperLiteral,
            bootstrap_replicates: 1000,
            seed: 0,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub overall_icer: f64,
    pub overall_var: VarianceValue,
    pub weighting_mode: WeightingMode,
    pub naive_icer: IcerValue,
    /// Clusters found by DBSCAN, valid or not.
    pub k: usize,
    pub n: usize,
    /// Patients discarded before estimation: scan flags plus DBSCAN noise.
    pub n_out: usize,
    pub n_scan_flagged: usize,
    pub n_noise: usize,
    /// Members of excluded clusters.
    pub n_excluded: usize,
    /// One weight per entry of `clusters`.
    pub weights: Vec<f64>,
    pub clusters: Vec<ClusterIcer>,
    pub excluded_clusters: Vec<ClusterIcer>,
    pub params: DbscanParams,
    pub params_heuristic: bool,
    /// Transform applied to the rows that were clustered.
    pub standardization: Standardization,
    /// Per patient, in input order: cluster id or -1 (noise or scan flag).
    pub labels: Vec<i64>,
    /// Rows removed by the centroid scan.
    pub scan_flagged_rows: Vec<usize>,
    pub config: PipelineConfig,
}

impl StratifiedReport {
    /// `Σ n_j + n_out`, counting excluded clusters inside the sum.
    pub fn accounted_patients(&self) -> usize {
        self.clusters
            .iter()
            .chain(&self.excluded_clusters)
            .map(|c| c.n)
            .sum::<usize>()
            + self.n_out
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One row per cluster (valid first, then excluded). Undefined cells are empty.
    pub fn write_clusters_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "cluster_id", "status", "n", "n_e", "n_c", "mean_cost_e", "mean_cost_c", "mean_eff_e",
            "mean_eff_c", "delta_cost", "delta_eff", "icer", "variance", "weight",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rows = self
            .clusters
            .iter()
            .zip(self.weights.iter().map(|&w| Some(w)))
            .chain(self.excluded_clusters.iter().map(|c| (c, None)));
        for (c, weight) in rows {
            let status = serde_json::to_value(c.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            w.write_record([
                c.cluster_id.to_string(),
                status,
                c.n.to_string(),
                c.n_e.to_string(),
                c.n_c.to_string(),
                opt(c.mean_cost_e),
                opt(c.mean_cost_c),
                opt(c.mean_eff_e),
                opt(c.mean_eff_c),
                opt(c.delta_cost),
                opt(c.delta_eff),
                opt(c.icer.value()),
                opt(c.variance.value()),
                opt(weight),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_config(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if !(cfg.ridge.is_finite() && cfg.ridge >= 0.0) {
        return Err(PipelineError::InvalidConfig(format!("ridge must be nonnegative, got {}", cfg.ridge)));
    }
    if !(cfg.eff_floor.is_finite() && cfg.eff_floor > 0.0) {
        return Err(PipelineError::InvalidConfig(format!("eff_floor must be positive, got {}", cfg.eff_floor)));
    }
    if let Some(t) = cfg.scan_threshold {
        if !(t.is_finite() && t > 0.0) {
            return Err(PipelineError::InvalidConfig(format!("scan threshold must be positive, got {t}")));
        }
    }
    if cfg.bootstrap_replicates != 0 && cfg.bootstrap_replicates < crate::icer::MIN_BOOTSTRAP_REPLICATES {
        return Err(IcerError::TooFewReplicates(cfg.bootstrap_replicates).into());
    }
    if let ParamChoice::Manual { eps, min_pts } = cfg.params {
        DbscanParams::new(eps, min_pts, cfg.metric)?;
    }
    Ok(())
}

pub fn run_pipeline(ds: &TrialDataset, cfg: &PipelineConfig) -> Result<StratifiedReport, PipelineError> {
    check_config(cfg)?;
    let n = ds.n();
    let x = factor_matrix(ds);
    let (z, full_standardization) = standardize(&x)?;

    let (kept, scan_flagged_rows): (Vec<usize>, Vec<usize>) = match cfg.scan_threshold {
        Some(threshold) => {
            let scan = centroid_scan(&z, cfg.metric, threshold, cfg.ridge)?;
            (0..n).partition(|&i| !scan.flags[i])
        }
        None => ((0..n).collect(), Vec::new()),
    };
    if kept.is_empty() {
        return Err(PipelineError::AllNoise(n));
    }
    // Flagged rows would otherwise keep inflating the scales used for clustering.
    let (zk, standardization) = if scan_flagged_rows.is_empty() {
        (z, full_standardization)
    } else if kept.len() >= 2 {
        standardize(&x.select_rows(&kept))?
    } else {
        (z.select_rows(&kept), full_standardization)
    };
    let cov = match cfg.metric {
        Metric::Mahalanobis => Some(fit_covariance(&zk, cfg.ridge)?),
        Metric::Euclidean => None,
    };
    let (params, params_heuristic) = match cfg.params {
        ParamChoice::Auto => (suggest_params(&zk, cfg.metric, cov.as_ref())?, true),
        ParamChoice::Manual { eps, min_pts } => (DbscanParams::new(eps, min_pts, cfg.metric)?, false),
    };
    let sub = dbscan(&zk, &params, cov.as_ref())?;
    if sub.k() == 0 {
        return Err(PipelineError::AllNoise(n));
    }
    let mut labels = vec![NOISE; n];
    for (&row, &label) in kept.iter().zip(sub.labels()) {
        labels[row] = label;
    }
    let assignment = ClusterAssignment::new(labels, sub.k())?;
    let n_scan_flagged = scan_flagged_rows.len();
    let n_noise = sub.noise_count();
    let n_out = n_scan_flagged + n_noise;

    let mut clusters = Vec::new();
    let mut excluded_clusters = Vec::new();
    for j in 0..assignment.k() {
        let mut c = cluster_icer(ds, &assignment, j, cfg.eff_floor)?;
        if !c.is_valid() {
            if cfg.strict {
                return Err(PipelineError::ClusterExcluded { cluster: j, status: c.status });
            }
            excluded_clusters.push(c);
            continue;
        }
        if cfg.bootstrap_replicates > 0 {
            c.variance = bootstrap_cluster_variance(
                ds,
                &assignment,
                j,
                cfg.bootstrap_replicates,
                cfg.seed,
                cfg.eff_floor,
            )?;
        }
        clusters.push(c);
    }
    let estimate = overall_icer(&clusters, n, n_out, cfg.weighting)?;
    let overall_var = icer_variance(&clusters, &estimate.weights)?;
    let naive = match naive_icer(ds, cfg.eff_floor) {
        Ok(value) => IcerValue::Defined { value },
        Err(IcerError::ZeroEffectDelta { .. }) => IcerValue::Undefined {
            reason: crate::icer::ClusterStatus::ZeroEffectDelta,
        },
        Err(e) => return Err(e.into()),
    };
    let n_excluded = excluded_clusters.iter().map(|c| c.n).sum();

    Ok(StratifiedReport {
        overall_icer: estimate.overall_icer,
        overall_var,
        weighting_mode: cfg.weighting,
        naive_icer: naive,
        k: assignment.k(),
        n,
        n_out,
        n_scan_flagged,
        n_noise,
        n_excluded,
        weights: estimate.weights,
        clusters,
        excluded_clusters,
        params,
        params_heuristic,
        standardization,
        labels: assignment.labels().to_vec(),
        scan_flagged_rows,
        config: cfg.clone(),
    })
}
