//! Synthetic two-arm trials with planted strata.
//!
//! Each stratum has its own factor center, arm-specific cost and effect
//! means, and its own probability of treatment. Giving strata different
//! treatment probabilities plants confounding by indication: the pooled
//! ICER mixes strata in different proportions per arm while the per-stratum
//! ICERs stay known.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Arm, DatasetError, PatientRecord, TrialDataset};
use crate::icer::DEFAULT_EFF_FLOOR;
use crate::pipeline::StratifiedReport;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("stratum {stratum} has effect difference {delta_eff}, too close to zero")]
    DegenerateStratum { stratum: usize, delta_eff: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("report covers {report} patients but the ground truth has {truth}")]
    MismatchedCohort { report: usize, truth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub weight: f64,
    pub factor_center: Vec<f64>,
    pub factor_spread: Vec<f64>,
    pub cost_mean_e: f64,
    pub cost_mean_c: f64,
    pub cost_sd: f64,
    pub eff_mean_e: f64,
    pub eff_mean_c: f64,
    pub eff_sd: f64,
    /// Probability that a member of this stratum is treated.
    pub arm_balance: f64,
}

impl StratumSpec {
    pub fn true_icer(&self) -> f64 {
        (self.cost_mean_e - self.cost_mean_c) / (self.eff_mean_e - self.eff_mean_c)
    }
}

fn default_outlier_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub strata: Vec<StratumSpec>,
    pub n: usize,
    #[serde(default)]
    pub outlier_rate: f64,
    /// Outliers sit at least this many factor spreads away from every center.
    #[serde(default = "default_outlier_scale")]
    pub outlier_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn factor_dim(&self) -> usize {
        self.strata.first().map_or(0, |s| s.factor_center.len())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.strata.is_empty() {
            return bad("at least one stratum is required".into());
        }
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        if !(0.0..0.2).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate must be in [0, 0.2), got {}", self.outlier_rate));
        }
        if !(self.outlier_scale.is_finite() && self.outlier_scale > 0.0) {
            return bad(format!("outlier_scale must be positive, got {}", self.outlier_scale));
        }
        let m = self.factor_dim();
        if m == 0 {
            return bad("strata need at least one factor".into());
        }
        let total: f64 = self.strata.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("stratum weights sum to {total}, expected 1"));
        }
        for (i, s) in self.strata.iter().enumerate() {
            if !(s.weight > 0.0 && s.weight <= 1.0) {
                return bad(format!("stratum {i}: weight {} outside (0, 1]", s.weight));
            }
            if s.factor_center.len() != m || s.factor_spread.len() != m {
                return bad(format!("stratum {i}: factor vectors must have length {m}"));
            }
            let finite = s.factor_center.iter().chain(&s.factor_spread).all(|v| v.is_finite())
                && [s.cost_mean_e, s.cost_mean_c, s.cost_sd, s.eff_mean_e, s.eff_mean_c, s.eff_sd]
                    .iter()
                    .all(|v| v.is_finite());
            if !finite {
                return bad(format!("stratum {i}: non-finite parameter"));
            }
            if s.factor_spread.iter().any(|&v| v < 0.0) || s.cost_sd < 0.0 || s.eff_sd < 0.0 {
                return bad(format!("stratum {i}: spreads and sds must be nonnegative"));
            }
            if s.cost_mean_e < 0.0 || s.cost_mean_c < 0.0 {
                return bad(format!("stratum {i}: cost means must be nonnegative"));
            }
            if !(s.arm_balance > 0.0 && s.arm_balance < 1.0) {
                return bad(format!("stratum {i}: arm_balance {} outside (0, 1)", s.arm_balance));
            }
            let delta_eff = s.eff_mean_e - s.eff_mean_c;
            if delta_eff.abs() <= DEFAULT_EFF_FLOOR {
                return Err(SimError::DegenerateStratum { stratum: i, delta_eff });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    /// True stratum of each patient; `None` for planted outliers.
    pub strata: Vec<Option<usize>>,
    pub stratum_weights: Vec<f64>,
    pub stratum_icers: Vec<f64>,
    /// `Σ weight_s · ICER_s`.
    pub overall_icer: f64,
    pub n_outliers: usize,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }
}

/// Nonnegative cost draw with the given mean and sd (gamma, or the mean itself when sd is 0).
fn draw_cost(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 || mean == 0.0 {
        return mean;
    }
    let shape = (mean / sd).powi(2);
    let scale = sd * sd / mean;
    Gamma::new(shape, scale).expect("positive gamma parameters").sample(rng)
}

fn draw_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite normal parameters").sample(rng)
}

pub fn simulate_trial(cfg: &SimConfig) -> Result<(TrialDataset, GroundTruth), SimError> {
    cfg.validate()?;
    let m = cfg.factor_dim();
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_outliers = (cfg.outlier_rate * n as f64).ceil() as usize;
    let mut is_outlier = vec![false; n];
    for i in index::sample(&mut rng, n, n_outliers) {
        is_outlier[i] = true;
    }

    let centroid: Vec<f64> = (0..m)
        .map(|d| cfg.strata.iter().map(|s| s.factor_center[d]).sum::<f64>() / cfg.strata.len() as f64)
        .collect();
    let max_offset = cfg
        .strata
        .iter()
        .map(|s| crate::metrics::euclidean(&s.factor_center, &centroid))
        .fold(0.0, f64::max);
    let max_spread = cfg
        .strata
        .iter()
        .flat_map(|s| s.factor_spread.iter().copied())
        .fold(0.0, f64::max);
    let outlier_radius = max_offset + cfg.outlier_scale * if max_spread > 0.0 { max_spread } else { 1.0 };

    let picker = WeightedIndex::new(cfg.strata.iter().map(|s| s.weight))
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let width = n.to_string().len();
    let mut records = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(n);
    for (i, &outlier) in is_outlier.iter().enumerate() {
        let s = picker.sample(&mut rng);
        let spec = &cfg.strata[s];
        let arm = if rng.random_bool(spec.arm_balance) {
            Arm::Experimental
        } else {
            Arm::Control
        };
        let (cost_mean, eff_mean) = match arm {
            Arm::Experimental => (spec.cost_mean_e, spec.eff_mean_e),
            Arm::Control => (spec.cost_mean_c, spec.eff_mean_c),
        };
        let cost = draw_cost(&mut rng, cost_mean, spec.cost_sd);
        let effect = draw_normal(&mut rng, eff_mean, spec.eff_sd);
        let factors = if outlier {
            let mut dir: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                dir[0] = 1.0;
            } else {
                dir.iter_mut().for_each(|v| *v /= norm);
            }
            (0..m).map(|d| centroid[d] + outlier_radius * dir[d]).collect()
        } else {
            (0..m)
                .map(|d| draw_normal(&mut rng, spec.factor_center[d], spec.factor_spread[d]))
                .collect()
        };
        records.push(PatientRecord {
            id: format!("p{:0width$}", i + 1),
            arm,
            cost,
            effect,
            factors,
        });
        strata.push((!outlier).then_some(s));
    }

    let names = (1..=m).map(|d| format!("factor_{d}")).collect();
    let ids = records.iter().map(|r| r.id.clone()).collect();
    let ds = TrialDataset::new(names, records)?;
    let stratum_icers: Vec<f64> = cfg.strata.iter().map(StratumSpec::true_icer).collect();
    let stratum_weights: Vec<f64> = cfg.strata.iter().map(|s| s.weight).collect();
    let overall_icer = stratum_weights.iter().zip(&stratum_icers).map(|(w, r)| w * r).sum();
    Ok((
        ds,
        GroundTruth {
            ids,
            strata,
            stratum_weights,
            stratum_icers,
            overall_icer,
            n_outliers,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// Share of non-outlier patients whose cluster maps to their true stratum
    /// under the best one-to-one relabeling.
    pub agreement: f64,
    pub overall_abs_error: f64,
    pub naive_abs_error: Option<f64>,
}

pub fn evaluate_recovery(report: &StratifiedReport, truth: &GroundTruth) -> Result<RecoveryMetrics, SimError> {
    if report.n != truth.len() || report.labels.len() != truth.len() {
        return Err(SimError::MismatchedCohort {
            report: report.n,
            truth: truth.len(),
        });
    }
    let n_strata = truth.stratum_icers.len();
    let mut overlap = vec![vec![0usize; n_strata]; report.k];
    let mut counted = 0usize;
    for (label, stratum) in report.labels.iter().zip(&truth.strata) {
        let Some(s) = *stratum else { continue };
        counted += 1;
        if *label >= 0 {
            overlap[*label as usize][s] += 1;
        }
    }
    let matched = max_overlap_matching(&overlap, n_strata);
    let agreement = if counted == 0 {
        0.0
    } else {
        matched as f64 / counted as f64
    };
    Ok(RecoveryMetrics {
        agreement,
        overall_abs_error: (report.overall_icer - truth.overall_icer).abs(),
        naive_abs_error: report.naive_icer.value().map(|v| (v - truth.overall_icer).abs()),
    })
}

/// Maximum total overlap over one-to-one cluster/stratum pairings
/// (Hungarian algorithm on the padded square cost matrix).
fn max_overlap_matching(overlap: &[Vec<usize>], n_strata: usize) -> usize {
    let size = overlap.len().max(n_strata);
    if size == 0 {
        return 0;
    }
    let best = overlap.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        let gain = overlap.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as i64;
        best - gain
    };
    // 1-based potentials formulation.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; size + 1];
    let mut v = vec![0i64; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=size)
        .filter(|&j| p[j] != 0)
        .map(|j| overlap.get(p[j] - 1).and_then(|r| r.get(j - 1)).copied().unwrap_or(0))
        .sum()
}
