//! Cluster-stratified incremental cost-effectiveness ratios for two-arm trials.
//!
//! Patients are grouped on their key factors with DBSCAN, points labeled as
//! noise are discarded, an ICER is computed inside every cluster, and the
//! cluster ratios are combined with size weights `n_j / n`. The variance of
//! the combined ratio is `Σ (n_j / n)² · var(ICER_j)` with each `var(ICER_j)`
//! estimated by a within-arm bootstrap.

pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod icer;
pub mod metrics;
pub mod pipeline;
pub mod simulate;

pub use clustering::{dbscan, k_distance_profile, suggest_params, ClusterAssignment, DbscanParams, NOISE};
pub use dataset::{factor_matrix, load_dataset, write_dataset, Arm, FactorSchema, PatientRecord, TrialDataset};
pub use icer::{
    bootstrap_cluster_variance, cluster_icer, icer_variance, naive_icer, overall_icer, ClusterIcer,
    ClusterStatus, IcerValue, VarianceValue, WeightingMode,
};
pub use metrics::{centroid_scan, fit_covariance, mahalanobis, standardize, CovarianceModel, Metric, OutlierScan};
pub use pipeline::{run_pipeline, ParamChoice, PipelineConfig, StratifiedReport};
pub use simulate::{evaluate_recovery, simulate_trial, GroundTruth, SimConfig, StratumSpec};
