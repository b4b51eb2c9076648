use nalgebra::DMatrix;
use proptest::prelude::*;

use strata_icer::clustering::{dbscan, suggest_params, ClusterAssignment, DbscanParams, NOISE};
use strata_icer::dataset::{factor_matrix, load_dataset, write_dataset, Arm, FactorSchema, PatientRecord, TrialDataset};
use strata_icer::icer::{bootstrap_cluster_variance, naive_icer, VarianceValue, DEFAULT_EFF_FLOOR};
use strata_icer::metrics::{fit_covariance, standardize, Metric};
use strata_icer::pipeline::{run_pipeline, ParamChoice, PipelineConfig, PipelineError, StratifiedReport};
use strata_icer::simulate::{evaluate_recovery, simulate_trial, GroundTruth, SimConfig, SimError, StratumSpec};

fn stratum(weight: f64, center: Vec<f64>, costs: (f64, f64), effects: (f64, f64), balance: f64) -> StratumSpec {
    let m = center.len();
    StratumSpec {
        weight,
        factor_center: center,
        factor_spread: vec![1.0; m],
        cost_mean_e: costs.0,
        cost_mean_c: costs.1,
        cost_sd: 100.0,
        eff_mean_e: effects.0,
        eff_mean_c: effects.1,
        eff_sd: 1.0,
        arm_balance: balance,
    }
}

/// Two blobs eight spreads apart on every factor axis. The k-distance
/// heuristic finds exactly these two clusters for m = 3; in fewer dimensions
/// it tends to add small clusters in the blob tails.
fn two_blobs(n: usize, seed: u64) -> SimConfig {
    SimConfig {
        strata: vec![
            stratum(0.4, vec![0.0; 3], (1500.0, 1000.0), (12.0, 2.0), 0.7),
            stratum(0.6, vec![8.0; 3], (4000.0, 3000.0), (30.0, 20.0), 0.3),
        ],
        n,
        outlier_rate: 0.0,
        outlier_scale: 10.0,
        seed,
    }
}

fn assert_balanced(r: &StratifiedReport) {
    assert_eq!(r.accounted_patients(), r.n);
}

#[test]
fn covariance_of_independent_columns_is_near_identity() {
    let cfg = SimConfig {
        strata: vec![stratum(1.0, vec![3.0, -2.0], (20.0, 10.0), (2.0, 1.0), 0.5)],
        n: 5000,
        outlier_rate: 0.0,
        outlier_scale: 10.0,
        seed: 21,
    };
    let (ds, _) = simulate_trial(&cfg).unwrap();
    let (z, _) = standardize(&factor_matrix(&ds)).unwrap();
    let model = fit_covariance(&z, 1e-8).unwrap();
    assert!((&model.covariance - DMatrix::identity(2, 2)).amax() < 0.1);
    assert!(model.covariance[(0, 1)].abs() < 0.1);
}

#[test]
fn suggested_params_separate_two_blobs() {
    let (ds, _) = simulate_trial(&two_blobs(600, 4)).unwrap();
    let (z, _) = standardize(&factor_matrix(&ds)).unwrap();
    let params = suggest_params(&z, Metric::Euclidean, None).unwrap();
    assert_eq!(params.min_pts, 4);
    let a = dbscan(&z, &params, None).unwrap();
    assert_eq!(a.k(), 2);

    let model = fit_covariance(&z, 1e-8).unwrap();
    let params = suggest_params(&z, Metric::Mahalanobis, Some(&model)).unwrap();
    // The global covariance stretches along the blob axis, so small tail
    // clusters may appear; the two blobs still dominate.
    let mut sizes = dbscan(&z, &params, Some(&model)).unwrap().cluster_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert!(sizes.len() >= 2 && sizes[0] + sizes[1] > 500, "{sizes:?}");
}

#[test]
fn bootstrap_matches_delta_method() {
    // One stratum with independent gamma costs and normal effects.
    let mut s = stratum(1.0, vec![0.0], (1600.0, 1000.0), (6.0, 2.0), 0.5);
    s.cost_sd = 300.0;
    s.eff_sd = 2.0;
    let cfg = SimConfig { strata: vec![s.clone()], n: 4000, outlier_rate: 0.0, outlier_scale: 10.0, seed: 99 };
    let (ds, _) = simulate_trial(&cfg).unwrap();
    let assignment = ClusterAssignment::new(vec![0; ds.n()], 1).unwrap();
    let var = bootstrap_cluster_variance(&ds, &assignment, 0, 10_000, 5, DEFAULT_EFF_FLOOR)
        .unwrap()
        .value()
        .unwrap();

    let (ne, nc) = (ds.n_experimental() as f64, ds.n_control() as f64);
    let icer = s.true_icer();
    let delta_eff = s.eff_mean_e - s.eff_mean_c;
    let var_dc = s.cost_sd.powi(2) * (1.0 / ne + 1.0 / nc);
    let var_de = s.eff_sd.powi(2) * (1.0 / ne + 1.0 / nc);
    let delta = (var_dc + icer * icer * var_de) / (delta_eff * delta_eff);
    assert!((var - delta).abs() / delta < 0.15, "bootstrap {var} vs delta method {delta}");
}

#[test]
fn planted_strata_are_recovered() {
    let (ds, truth) = simulate_trial(&two_blobs(600, 8)).unwrap();
    let cfg = PipelineConfig { bootstrap_replicates: 300, seed: 2, ..PipelineConfig::default() };
    let r = run_pipeline(&ds, &cfg).unwrap();
    assert_balanced(&r);
    assert_eq!(r.k, 2);
    assert!((truth.overall_icer - 80.0).abs() < 1e-12);
    let rec = evaluate_recovery(&r, &truth).unwrap();
    assert!(rec.agreement > 0.95, "agreement {}", rec.agreement);
    assert!(rec.overall_abs_error < 8.0, "error {}", rec.overall_abs_error);
    assert!(rec.overall_abs_error < rec.naive_abs_error.unwrap());
    assert!(r.overall_var.value().unwrap() > 0.0);
}

#[test]
fn one_big_cluster_equals_naive() {
    let (ds, _) = simulate_trial(&two_blobs(300, 1)).unwrap();
    let cfg = PipelineConfig {
        params: ParamChoice::Manual { eps: 1e3, min_pts: 2 },
        bootstrap_replicates: 0,
        ..PipelineConfig::default()
    };
    let r = run_pipeline(&ds, &cfg).unwrap();
    assert_balanced(&r);
    assert_eq!(r.k, 1);
    assert_eq!(r.overall_icer, naive_icer(&ds, DEFAULT_EFF_FLOOR).unwrap());
    assert_eq!(r.overall_var, VarianceValue::Unavailable { reason: strata_icer::icer::UnavailableReason::Propagated });
}

#[test]
fn everything_noise_is_an_error() {
    let (ds, _) = simulate_trial(&two_blobs(100, 1)).unwrap();
    let cfg = PipelineConfig { params: ParamChoice::Manual { eps: 1e-9, min_pts: 2 }, ..PipelineConfig::default() };
    assert!(matches!(run_pipeline(&ds, &cfg), Err(PipelineError::AllNoise(100))));
}

#[test]
fn planted_outliers_are_discarded() {
    let mut cfg = two_blobs(800, 12);
    cfg.outlier_rate = 0.01;
    let (ds, truth) = simulate_trial(&cfg).unwrap();
    for metric in [Metric::Euclidean, Metric::Mahalanobis] {
        let pcfg = PipelineConfig {
            metric,
            scan_threshold: Some(3.0),
            bootstrap_replicates: 200,
            ..PipelineConfig::default()
        };
        let r = run_pipeline(&ds, &pcfg).unwrap();
        assert_balanced(&r);
        for (i, s) in truth.strata.iter().enumerate() {
            if s.is_none() {
                assert_eq!(r.labels[i], NOISE, "{metric}: outlier row {i} kept");
            }
        }
        assert!(r.n_out >= truth.n_outliers);
        let rec = evaluate_recovery(&r, &truth).unwrap();
        assert!(rec.agreement > 0.9, "{metric}: agreement {}", rec.agreement);
    }
}

#[test]
fn recovery_of_a_lumped_clustering() {
    // Equal-weight strata, everything in one cluster: half the patients match.
    let (ds, truth) = simulate_trial(&SimConfig {
        strata: vec![
            stratum(0.5, vec![0.0], (20.0, 10.0), (2.0, 1.0), 0.5),
            stratum(0.5, vec![9.0], (20.0, 10.0), (2.0, 1.0), 0.5),
        ],
        ..two_blobs(100, 3)
    })
    .unwrap();
    let mut truth = truth;
    let half = ds.n() / 2;
    truth.strata = (0..ds.n()).map(|i| Some(usize::from(i >= half))).collect();
    let cfg = PipelineConfig {
        params: ParamChoice::Manual { eps: 1e3, min_pts: 2 },
        bootstrap_replicates: 0,
        ..PipelineConfig::default()
    };
    let r = run_pipeline(&ds, &cfg).unwrap();
    assert_eq!(evaluate_recovery(&r, &truth).unwrap().agreement, 0.5);

    let mut perfect = r.clone();
    perfect.k = 2;
    perfect.labels = truth.strata.iter().map(|s| s.unwrap() as i64).collect();
    assert_eq!(evaluate_recovery(&perfect, &truth).unwrap().agreement, 1.0);

    let other = GroundTruth { strata: vec![Some(0); 10], ..truth };
    assert!(matches!(evaluate_recovery(&r, &other), Err(SimError::MismatchedCohort { .. })));
}

fn points_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..60, 1usize..4).prop_flat_map(|(n, m)| {
        prop::collection::vec(-5.0f64..5.0, n * m).prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
    })
}

/// Core points grouped by cluster id, as a canonical partition.
fn core_partition(z: &DMatrix<f64>, labels: &[i64], params: &DbscanParams, order: &[usize]) -> Vec<Vec<usize>> {
    let n = z.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().copied().collect()).collect();
    let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for i in 0..n {
        let count = rows
            .iter()
            .filter(|p| strata_icer::metrics::euclidean(&rows[i], p) <= params.eps)
            .count();
        if count >= params.min_pts {
            groups.entry(labels[i]).or_default().push(order[i]);
        }
    }
    let mut parts: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    parts.sort();
    parts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn core_partition_survives_permutation(z in points_strategy(), eps in 0.2f64..3.0, min_pts in 1usize..6, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = z.nrows();
        let params = DbscanParams::new(eps, min_pts, Metric::Euclidean).unwrap();
        let base = dbscan(&z, &params, None).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let zp = z.select_rows(&perm);
        let shuffled = dbscan(&zp, &params, None).unwrap();
        let identity: Vec<usize> = (0..n).collect();
        prop_assert_eq!(
            core_partition(&z, base.labels(), &params, &identity),
            core_partition(&zp, shuffled.labels(), &params, &perm)
        );
    }

    #[test]
    fn growing_eps_never_adds_noise(z in points_strategy(), eps in 0.1f64..2.0, grow in 0.0f64..2.0, min_pts in 1usize..6) {
        let small = dbscan(&z, &DbscanParams::new(eps, min_pts, Metric::Euclidean).unwrap(), None).unwrap();
        let large = dbscan(&z, &DbscanParams::new(eps + grow, min_pts, Metric::Euclidean).unwrap(), None).unwrap();
        prop_assert!(large.noise_count() <= small.noise_count());
        for (a, b) in small.labels().iter().zip(large.labels()) {
            prop_assert!(*a == NOISE || *b != NOISE);
        }
    }

    #[test]
    fn csv_round_trip(
        rows in prop::collection::vec(
            (any::<bool>(), 0.0f64..1e7, -1e3f64..1e3, prop::collection::vec(-1e6f64..1e6, 3)),
            2..40,
        )
    ) {
        let mut records: Vec<PatientRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (treated, cost, effect, factors))| PatientRecord {
                id: format!("id-{i}"),
                arm: if treated { Arm::Experimental } else { Arm::Control },
                cost,
                effect,
                factors,
            })
            .collect();
        records[0].arm = Arm::Experimental;
        records[1].arm = Arm::Control;
        let ds = TrialDataset::new(vec!["age".into(), "lvef".into(), "nyha".into()], records).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = load_dataset(buf.as_slice(), &FactorSchema::AllRemaining).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn cost_scaling_leaves_partition_alone() {
    let (ds, _) = simulate_trial(&two_blobs(400, 6)).unwrap();
    let cfg = PipelineConfig { bootstrap_replicates: 0, ..PipelineConfig::default() };
    let base = run_pipeline(&ds, &cfg).unwrap();
    let scaled = run_pipeline(&ds.map_costs(|c| c * 0.5).unwrap(), &cfg).unwrap();
    assert_eq!(base.labels, scaled.labels);
    // Halving is exact in binary floating point.
    assert_eq!(scaled.overall_icer, base.overall_icer * 0.5);
}
