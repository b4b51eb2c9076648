//! Incremental cost-effectiveness ratios: whole-cohort, per cluster, and the
//! size-weighted combination of per-cluster ratios with its variance.
//!
//! Ratios whose effect difference is within `eff_floor` of zero are reported
//! as undefined instead of producing huge or infinite values.
//!
//! Per-cluster variance comes from a within-arm bootstrap. Bootstrap
//! inference after matching or stratification can be inconsistent (the
//! known failure for nearest-neighbour matching estimators); treat the
//! variance as descriptive when clusters are small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterAssignment;
use crate::dataset::{Arm, TrialDataset};

pub const DEFAULT_EFF_FLOOR: f64 = 1e-9;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;
/// Above this share of degenerate replicates the bootstrap variance is withheld.
pub const MAX_DEGENERATE_SHARE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum IcerError {
    #[error("effect difference {delta_eff:e} is within eff_floor of zero")]
    ZeroEffectDelta { delta_eff: f64 },
    #[error("cluster {cluster} does not exist (k = {k})")]
    UnknownCluster { cluster: usize, k: usize },
    #[error("cluster {cluster} is not valid ({status:?})")]
    ClusterNotValid { cluster: usize, status: ClusterStatus },
    #[error("bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("no cluster has a defined ICER")]
    NoValidClusters,
    #[error("assignment covers {assignment} rows but the dataset has {dataset}")]
    AssignmentMismatch { assignment: usize, dataset: usize },
    #[error("{0} weights given for {1} clusters")]
    WeightMismatch(usize, usize),
    #[error("clusters and outliers account for {counted} patients but the cohort has {n}")]
    CountMismatch { counted: usize, n: usize },
    #[error("eff_floor must be finite and positive, got {0}")]
    InvalidEffFloor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Valid,
    OneArmOnly,
    ZeroEffectDelta,
}

/// A ratio that may be undefined. Serialized with an explicit `status` tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IcerValue {
    Defined { value: f64 },
    Undefined { reason: ClusterStatus },
}

impl IcerValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            IcerValue::Defined { value } => Some(*value),
            IcerValue::Undefined { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnavailableReason {
    /// Too many bootstrap replicates had a vanishing effect difference.
    UnstableRatio,
    /// Fewer than two usable replicates.
    TooFewReplicates,
    /// The bootstrap was switched off.
    NotComputed,
    /// The cluster has no defined ratio.
    ClusterNotValid,
    /// A contributing cluster's variance is unavailable.
    Propagated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VarianceValue {
    Available { value: f64 },
    Unavailable { reason: UnavailableReason },
}

impl VarianceValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            VarianceValue::Available { value } => Some(*value),
            VarianceValue::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIcer {
    pub cluster_id: usize,
    pub n_e: usize,
    pub n_c: usize,
    pub n: usize,
    pub mean_cost_e: Option<f64>,
    pub mean_cost_c: Option<f64>,
    pub mean_eff_e: Option<f64>,
    pub mean_eff_c: Option<f64>,
    pub delta_cost: Option<f64>,
    pub delta_eff: Option<f64>,
    pub icer: IcerValue,
    pub variance: VarianceValue,
    pub status: ClusterStatus,
}

impl ClusterIcer {
    pub fn is_valid(&self) -> bool {
        self.status == ClusterStatus::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// `n_j / n` with `n` the full cohort, outliers included.
    #[default]
    PaperLiteral,
    /// `n_j / Σ n_j` over valid clusters.
    Renormalized,
}

impl std::str::FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "paper" | "paper_literal" => Ok(WeightingMode::PaperLiteral),
            "renormalized" => Ok(WeightingMode::Renormalized),
            other => Err(format!("unknown weighting mode {other:?}")),
        }
    }
}

#[derive(Default)]
struct ArmSums {
    n: usize,
    cost: f64,
    effect: f64,
}

impl ArmSums {
    fn add(&mut self, cost: f64, effect: f64) {
        self.n += 1;
        self.cost += cost;
        self.effect += effect;
    }

    fn means(&self) -> Option<(f64, f64)> {
        (self.n > 0).then(|| (self.cost / self.n as f64, self.effect / self.n as f64))
    }
}

fn check_floor(eff_floor: f64) -> Result<(), IcerError> {
    if eff_floor.is_finite() && eff_floor > 0.0 {
        Ok(())
    } else {
        Err(IcerError::InvalidEffFloor(eff_floor))
    }
}

fn summarize(ds: &TrialDataset, rows: impl Iterator<Item = usize>) -> (ArmSums, ArmSums) {
    let (mut e, mut c) = (ArmSums::default(), ArmSums::default());
    let records = ds.records();
    for i in rows {
        let r = &records[i];
        match r.arm {
            Arm::Experimental => e.add(r.cost, r.effect),
            Arm::Control => c.add(r.cost, r.effect),
        }
    }
    (e, c)
}

/// Difference in mean cost over difference in mean effect, whole cohort.
pub fn naive_icer(ds: &TrialDataset, eff_floor: f64) -> Result<f64, IcerError> {
    check_floor(eff_floor)?;
    let (e, c) = summarize(ds, 0..ds.n());
    let (cost_e, eff_e) = e.means().expect("dataset has experimental patients");
    let (cost_c, eff_c) = c.means().expect("dataset has control patients");
    let delta_eff = eff_e - eff_c;
    if delta_eff.abs() <= eff_floor {
        return Err(IcerError::ZeroEffectDelta { delta_eff });
    }
    Ok((cost_e - cost_c) / delta_eff)
}

/// ICER over the members of cluster `j` only. Variance is left `NotComputed`.
pub fn cluster_icer(
    ds: &TrialDataset,
    assignment: &ClusterAssignment,
    j: usize,
    eff_floor: f64,
) -> Result<ClusterIcer, IcerError> {
    check_floor(eff_floor)?;
    if assignment.len() != ds.n() {
        return Err(IcerError::AssignmentMismatch {
            assignment: assignment.len(),
            dataset: ds.n(),
        });
    }
    if j >= assignment.k() {
        return Err(IcerError::UnknownCluster {
            cluster: j,
            k: assignment.k(),
        });
    }
    let (e, c) = summarize(ds, assignment.members(j));
    let me = e.means();
    let mc = c.means();
    let (delta_cost, delta_eff) = match (me, mc) {
        (Some((ce, ee)), Some((cc, ec))) => (Some(ce - cc), Some(ee - ec)),
        _ => (None, None),
    };
    let status = match delta_eff {
        None => ClusterStatus::OneArmOnly,
        Some(d) if d.abs() <= eff_floor => ClusterStatus::ZeroEffectDelta,
        Some(_) => ClusterStatus::Valid,
    };
    let icer = match (status, delta_cost, delta_eff) {
        (ClusterStatus::Valid, Some(dc), Some(de)) => IcerValue::Defined { value: dc / de },
        _ => IcerValue::Undefined { reason: status },
    };
    let variance = if status == ClusterStatus::Valid {
        VarianceValue::Unavailable {
            reason: UnavailableReason::NotComputed,
        }
    } else {
        VarianceValue::Unavailable {
            reason: UnavailableReason::ClusterNotValid,
        }
    };
    Ok(ClusterIcer {
        cluster_id: j,
        n_e: e.n,
        n_c: c.n,
        n: e.n + c.n,
        mean_cost_e: me.map(|m| m.0),
        mean_cost_c: mc.map(|m| m.0),
        mean_eff_e: me.map(|m| m.1),
        mean_eff_c: mc.map(|m| m.1),
        delta_cost,
        delta_eff,
        icer,
        variance,
        status,
    })
}

/// Independent generator for replicate `replicate` of cluster `cluster`.
fn replicate_rng(seed: u64, cluster: usize, replicate: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(cluster as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(replicate as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn resample_means(rng: &mut ChaCha8Rng, ds: &TrialDataset, rows: &[usize]) -> (f64, f64) {
    let records = ds.records();
    let (mut cost, mut effect) = (0.0, 0.0);
    for _ in 0..rows.len() {
        let r = &records[rows[rng.random_range(0..rows.len())]];
        cost += r.cost;
        effect += r.effect;
    }
    let n = rows.len() as f64;
    (cost / n, effect / n)
}

/// Running mean and sum of squared deviations.
#[derive(Default)]
struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sample_variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0))
    }
}

/// Sample variance of the cluster ICER over `replicates` stratified bootstrap
/// resamples (experimental and control arms resampled separately).
///
/// Replicate `r` draws from a generator keyed by `(seed, j, r)`, so the result
/// does not depend on how replicates are scheduled across threads.
pub fn bootstrap_cluster_variance(
    ds: &TrialDataset,
    assignment: &ClusterAssignment,
    j: usize,
    replicates: usize,
    seed: u64,
    eff_floor: f64,
) -> Result<VarianceValue, IcerError> {
    let summary = cluster_icer(ds, assignment, j, eff_floor)?;
    if !summary.is_valid() {
        return Err(IcerError::ClusterNotValid {
            cluster: j,
            status: summary.status,
        });
    }
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(IcerError::TooFewReplicates(replicates));
    }
    let (exp, ctl): (Vec<usize>, Vec<usize>) = assignment
        .members(j)
        .partition(|&i| ds.records()[i].arm == Arm::Experimental);

    let ratios: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, j, r);
            let (cost_e, eff_e) = resample_means(&mut rng, ds, &exp);
            let (cost_c, eff_c) = resample_means(&mut rng, ds, &ctl);
            let delta_eff = eff_e - eff_c;
            (delta_eff.abs() > eff_floor).then(|| (cost_e - cost_c) / delta_eff)
        })
        .collect();

    let degenerate = ratios.iter().filter(|r| r.is_none()).count();
    if degenerate as f64 > MAX_DEGENERATE_SHARE * replicates as f64 {
        return Ok(VarianceValue::Unavailable {
            reason: UnavailableReason::UnstableRatio,
        });
    }
    let mut acc = Welford::default();
    ratios.into_iter().flatten().for_each(|x| acc.push(x));
    Ok(match acc.sample_variance() {
        Some(value) => VarianceValue::Available { value },
        None => VarianceValue::Unavailable {
            reason: UnavailableReason::TooFewReplicates,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallEstimate {
    pub overall_icer: f64,
    /// One weight per valid cluster, in input order.
    pub weights: Vec<f64>,
}

/// Size-weighted sum of the valid clusters' ICERs. Invalid clusters get no term.
pub fn overall_icer(
    clusters: &[ClusterIcer],
    n: usize,
    n_out: usize,
    mode: WeightingMode,
) -> Result<OverallEstimate, IcerError> {
    let valid: Vec<&ClusterIcer> = clusters.iter().filter(|c| c.is_valid()).collect();
    if valid.is_empty() {
        return Err(IcerError::NoValidClusters);
    }
    let denominator = match mode {
        WeightingMode::PaperLiteral => n,
        WeightingMode::Renormalized => valid.iter().map(|c| c.n).sum(),
    } as f64;
    let counted: usize = valid.iter().map(|c| c.n).sum::<usize>() + n_out;
    if counted > n {
        return Err(IcerError::CountMismatch { counted, n });
    }
    let weights: Vec<f64> = valid.iter().map(|c| c.n as f64 / denominator).collect();
    let overall_icer = valid
        .iter()
        .zip(&weights)
        .map(|(c, w)| w * c.icer.value().expect("valid cluster has a ratio"))
        .sum();
    Ok(OverallEstimate {
        overall_icer,
        weights,
    })
}

/// `Σ w_j² · var_j` over valid clusters; `weights` align with the valid clusters.
pub fn icer_variance(clusters: &[ClusterIcer], weights: &[f64]) -> Result<VarianceValue, IcerError> {
    let valid: Vec<&ClusterIcer> = clusters.iter().filter(|c| c.is_valid()).collect();
    if valid.len() != weights.len() {
        return Err(IcerError::WeightMismatch(weights.len(), valid.len()));
    }
    let mut total = 0.0;
    for (c, w) in valid.iter().zip(weights) {
        match c.variance {
            VarianceValue::Available { value } => total += w * w * value,
            VarianceValue::Unavailable { .. } => {
                return Ok(VarianceValue::Unavailable {
                    reason: UnavailableReason::Propagated,
                })
            }
        }
    }
    Ok(VarianceValue::Available { value: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::NOISE;
    use crate::dataset::PatientRecord;

    fn patient(id: &str, arm: Arm, cost: f64, effect: f64) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            arm,
            cost,
            effect,
            factors: vec![0.0],
        }
    }

    fn four_patients() -> TrialDataset {
        TrialDataset::new(
            vec!["x".into()],
            vec![
                patient("e1", Arm::Experimental, 100.0, 2.0),
                patient("e2", Arm::Experimental, 200.0, 4.0),
                patient("c1", Arm::Control, 50.0, 1.0),
                patient("c2", Arm::Control, 150.0, 3.0),
            ],
        )
        .unwrap()
    }

    fn valid_cluster(id: usize, n: usize, icer: f64, var: VarianceValue) -> ClusterIcer {
        ClusterIcer {
            cluster_id: id,
            n_e: n / 2,
            n_c: n - n / 2,
            n,
            mean_cost_e: Some(icer),
            mean_cost_c: Some(0.0),
            mean_eff_e: Some(1.0),
            mean_eff_c: Some(0.0),
            delta_cost: Some(icer),
            delta_eff: Some(1.0),
            icer: IcerValue::Defined { value: icer },
            variance: var,
            status: ClusterStatus::Valid,
        }
    }

    #[test]
    fn naive_hand_example() {
        assert_eq!(naive_icer(&four_patients(), DEFAULT_EFF_FLOOR).unwrap(), 50.0);
    }

    #[test]
    fn naive_zero_numerator_and_singularity() {
        let ds = TrialDataset::new(
            vec!["x".into()],
            vec![
                patient("e1", Arm::Experimental, 10.0, 5.0),
                patient("c1", Arm::Control, 10.0, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(naive_icer(&ds, DEFAULT_EFF_FLOOR).unwrap(), 0.0);
        let ds = TrialDataset::new(
            vec!["x".into()],
            vec![
                patient("e1", Arm::Experimental, 10.0, 2.0),
                patient("c1", Arm::Control, 5.0, 2.0),
            ],
        )
        .unwrap();
        assert!(matches!(naive_icer(&ds, DEFAULT_EFF_FLOOR), Err(IcerError::ZeroEffectDelta { .. })));
    }

    #[test]
    fn cluster_of_whole_example() {
        let ds = four_patients();
        let a = ClusterAssignment::new(vec![0; 4], 1).unwrap();
        let c = cluster_icer(&ds, &a, 0, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(c.icer, IcerValue::Defined { value: 50.0 });
        assert_eq!(c.status, ClusterStatus::Valid);
        assert_eq!((c.n_e, c.n_c, c.n), (2, 2, 4));
        assert_eq!(c.delta_cost, Some(50.0));
        assert_eq!(c.delta_eff, Some(1.0));
    }

    #[test]
    fn one_arm_and_flat_effect_clusters() {
        let ds = four_patients();
        let a = ClusterAssignment::new(vec![1, NOISE, 0, 0], 2).unwrap();
        let c = cluster_icer(&ds, &a, 0, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(c.status, ClusterStatus::OneArmOnly);
        assert_eq!(c.icer, IcerValue::Undefined { reason: ClusterStatus::OneArmOnly });
        assert_eq!(c.mean_cost_e, None);
        assert_eq!(c.mean_cost_c, Some(100.0));

        let ds = TrialDataset::new(
            vec!["x".into()],
            vec![
                patient("e1", Arm::Experimental, 10.0, 1.0),
                patient("e2", Arm::Experimental, 10.0, 3.0),
                patient("c1", Arm::Control, 5.0, 2.0),
            ],
        )
        .unwrap();
        let a = ClusterAssignment::new(vec![0; 3], 1).unwrap();
        let c = cluster_icer(&ds, &a, 0, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(c.status, ClusterStatus::ZeroEffectDelta);
        assert!(matches!(
            bootstrap_cluster_variance(&ds, &a, 0, 200, 1, DEFAULT_EFF_FLOOR),
            Err(IcerError::ClusterNotValid { .. })
        ));
    }

    #[test]
    fn unknown_cluster() {
        let ds = four_patients();
        let a = ClusterAssignment::new(vec![0; 4], 1).unwrap();
        assert!(matches!(cluster_icer(&ds, &a, 1, DEFAULT_EFF_FLOOR), Err(IcerError::UnknownCluster { .. })));
    }

    #[test]
    fn bootstrap_without_spread_is_zero() {
        let mut records = Vec::new();
        for i in 0..7 {
            records.push(patient(&format!("e{i}"), Arm::Experimental, 10.0, 2.0));
            records.push(patient(&format!("c{i}"), Arm::Control, 5.0, 1.0));
        }
        let ds = TrialDataset::new(vec!["x".into()], records).unwrap();
        let a = ClusterAssignment::new(vec![0; 14], 1).unwrap();
        let v = bootstrap_cluster_variance(&ds, &a, 0, 500, 3, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(v, VarianceValue::Available { value: 0.0 });
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let ds = four_patients();
        let a = ClusterAssignment::new(vec![0; 4], 1).unwrap();
        let run = |seed| bootstrap_cluster_variance(&ds, &a, 0, 300, seed, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(run(11), run(11));
        assert!(matches!(
            bootstrap_cluster_variance(&ds, &a, 0, 99, 1, DEFAULT_EFF_FLOOR),
            Err(IcerError::TooFewReplicates(99))
        ));
    }

    #[test]
    fn tiny_cluster_bootstrap_is_unstable() {
        // Experimental effects {1,2} vs control {1}: a quarter of the resamples tie.
        let ds = TrialDataset::new(
            vec!["x".into()],
            vec![
                patient("e1", Arm::Experimental, 10.0, 1.0),
                patient("e2", Arm::Experimental, 10.0, 2.0),
                patient("c1", Arm::Control, 5.0, 1.0),
            ],
        )
        .unwrap();
        let a = ClusterAssignment::new(vec![0; 3], 1).unwrap();
        let v = bootstrap_cluster_variance(&ds, &a, 0, 400, 5, DEFAULT_EFF_FLOOR).unwrap();
        assert_eq!(v, VarianceValue::Unavailable { reason: UnavailableReason::UnstableRatio });
    }

    #[test]
    fn welford_exact_on_constants() {
        let mut w = Welford::default();
        for _ in 0..1000 {
            w.push(0.1);
        }
        assert_eq!(w.sample_variance(), Some(0.0));
        let mut w = Welford::default();
        [1.0, 2.0, 3.0, 4.0].iter().for_each(|&x| w.push(x));
        assert!((w.sample_variance().unwrap() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_overall_hand_examples() {
        let na = VarianceValue::Unavailable { reason: UnavailableReason::NotComputed };
        let clusters = vec![valid_cluster(0, 4, 50.0, na), valid_cluster(1, 6, 100.0, na)];
        for mode in [WeightingMode::PaperLiteral, WeightingMode::Renormalized] {
            let o = overall_icer(&clusters, 10, 0, mode).unwrap();
            assert!((o.overall_icer - 80.0).abs() < 1e-12);
        }
        let lit = overall_icer(&clusters, 12, 2, WeightingMode::PaperLiteral).unwrap();
        assert!((lit.overall_icer - (4.0 / 12.0 * 50.0 + 6.0 / 12.0 * 100.0)).abs() < 1e-12);
        assert!((lit.overall_icer - 66.666_666_666_666_67).abs() < 1e-9);
        let ren = overall_icer(&clusters, 12, 2, WeightingMode::Renormalized).unwrap();
        assert!((ren.overall_icer - 80.0).abs() < 1e-12);
        assert!((ren.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_clusters_are_skipped() {
        let na = VarianceValue::Unavailable { reason: UnavailableReason::NotComputed };
        let mut bad = valid_cluster(1, 3, 0.0, na);
        bad.status = ClusterStatus::OneArmOnly;
        bad.icer = IcerValue::Undefined { reason: ClusterStatus::OneArmOnly };
        let clusters = vec![valid_cluster(0, 4, 50.0, na), bad.clone()];
        let o = overall_icer(&clusters, 7, 0, WeightingMode::PaperLiteral).unwrap();
        assert_eq!(o.weights.len(), 1);
        assert!((o.overall_icer - 4.0 / 7.0 * 50.0).abs() < 1e-12);
        assert!(matches!(
            overall_icer(&[bad], 3, 0, WeightingMode::PaperLiteral),
            Err(IcerError::NoValidClusters)
        ));
    }

    #[test]
    fn variance_propagation() {
        let four = VarianceValue::Available { value: 4.0 };
        let zero = VarianceValue::Available { value: 0.0 };
        let gone = VarianceValue::Unavailable { reason: UnavailableReason::UnstableRatio };
        let pair = |a, b| vec![valid_cluster(0, 5, 1.0, a), valid_cluster(1, 5, 2.0, b)];
        assert_eq!(
            icer_variance(&pair(four, four), &[0.5, 0.5]).unwrap(),
            VarianceValue::Available { value: 2.0 }
        );
        assert_eq!(
            icer_variance(&pair(zero, zero), &[0.5, 0.5]).unwrap(),
            VarianceValue::Available { value: 0.0 }
        );
        assert_eq!(
            icer_variance(&pair(four, gone), &[0.5, 0.5]).unwrap(),
            VarianceValue::Unavailable { reason: UnavailableReason::Propagated }
        );
        assert!(matches!(icer_variance(&pair(four, four), &[1.0]), Err(IcerError::WeightMismatch(1, 2))));
    }

    #[test]
    fn tagged_values_serialize_explicitly() {
        let v = serde_json::to_string(&IcerValue::Undefined { reason: ClusterStatus::OneArmOnly }).unwrap();
        assert_eq!(v, r#"{"status":"undefined","reason":"one_arm_only"}"#);
        let v = serde_json::to_string(&VarianceValue::Available { value: 2.5 }).unwrap();
        assert_eq!(v, r#"{"status":"available","value":2.5}"#);
    }
}
