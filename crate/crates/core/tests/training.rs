use fairltr::clicksim::{ips_relevance_estimates, simulate_clicks};
use fairltr::datasets::{generate_synthetic, Query, QuerySet};
use fairltr::fairlp::{FairnessMode, FairnessSpec};
use fairltr::linalg::Matrix;
use fairltr::scorer::{init_network, AdamState};
use fairltr::spotrain::{train, train_epoch, TrainConfig, TrainingSet};

/// Queries whose single feature is the relevance label itself.
fn label_feature_queries() -> QuerySet {
    let ys = [
        vec![0.9, 0.1, 0.5, 0.3],
        vec![0.2, 0.8, 0.4, 0.6],
        vec![0.7, 0.0, 1.0, 0.3],
    ];
    let queries = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let features = Matrix::from_vec(y.len(), 1, y.clone());
            Query::new(k as u64, features, vec![0, 1, 0, 1], y.clone()).unwrap()
        })
        .collect();
    QuerySet::new(queries, 2, 1).unwrap()
}

#[test]
fn exact_scorer_is_a_fixed_point() {
    let qs = label_feature_queries();
    let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.05, 1.0);
    let set = TrainingSet::full(&qs, &spec).unwrap();
    let mut params = init_network::<f64>(1, 0).unwrap();
    params.set_flat(&[1.0, 0.0]).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        batch: 2,
        spec,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(&params, cfg.lr);
    let m = train_epoch(&set, &mut params, &mut adam, &cfg, 0).unwrap();
    assert_eq!(params.flatten(), vec![1.0, 0.0]);
    assert!(m.mean_regret.abs() < 1e-12);
}

#[test]
fn batch_size_is_irrelevant_for_a_single_query() {
    let qs = generate_synthetic(1, 6, 4, 2, 3).unwrap();
    let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.1, 1.0);
    let set = TrainingSet::full(&qs, &spec).unwrap();
    let run = |batch| {
        let mut params = init_network::<f64>(4, 1).unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            batch,
            spec: spec.clone(),
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(&params, cfg.lr);
        train_epoch(&set, &mut params, &mut adam, &cfg, 0).unwrap();
        params.flatten()
    };
    assert_eq!(run(1), run(64));
}

#[test]
fn unconstrained_training_reduces_regret() {
    let qs = generate_synthetic(200, 8, 8, 2, 11).unwrap();
    let spec = FairnessSpec::new(FairnessMode::Unweighted, f64::INFINITY, 1.0);
    let set = TrainingSet::full(&qs, &spec).unwrap();
    let mut params = init_network::<f64>(8, 2).unwrap();
    let start = fairltr::spotrain::evaluate(0, &params, &qs, &spec, set.cache()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        batch: 16,
        epochs: 3,
        spec: spec.clone(),
        seed: 5,
        ..TrainConfig::default()
    };
    let history = train(&set, &mut params, &cfg, |_| {}).unwrap();
    let mut prev = start.mean_regret;
    for m in &history {
        assert!(m.mean_regret < prev, "{} !< {prev}", m.mean_regret);
        prev = m.mean_regret;
    }
}

#[test]
fn training_is_deterministic() {
    let qs = generate_synthetic(40, 6, 4, 2, 8).unwrap();
    let spec = FairnessSpec::new(FairnessMode::MeritWeighted, 0.2, 1.0);
    let run = || {
        let set = TrainingSet::full(&qs, &spec).unwrap();
        let mut params = init_network::<f64>(4, 3).unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            batch: 8,
            epochs: 2,
            spec: spec.clone(),
            seed: 1,
            ..TrainConfig::default()
        };
        let h = train(&set, &mut params, &cfg, |_| {}).unwrap();
        (params.flatten(), h)
    };
    assert_eq!(run(), run());
}

#[test]
fn partial_information_targets_are_ips_estimates() {
    let qs = generate_synthetic(5, 6, 4, 2, 2).unwrap();
    let log = simulate_clicks(&qs, 50, 0.5, 4).unwrap();
    let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.2, 1.0);
    let set = TrainingSet::partial(&qs, &log, &spec).unwrap();
    assert_eq!(set.targets, ips_relevance_estimates(&log, &qs).unwrap());
}

#[test]
fn ips_relevance_estimates_are_unbiased() {
    let qs = generate_synthetic(10, 6, 4, 2, 12).unwrap();
    let sweeps = 20_000;
    let log = simulate_clicks(&qs, sweeps, 0.5, 3).unwrap();
    let est = ips_relevance_estimates(&log, &qs).unwrap();
    for (q, e) in qs.queries.iter().zip(&est) {
        for (&y, &yh) in q.relevances.iter().zip(e) {
            // Per-sweep variance is at most y(1+n) with n = 6.
            let se = (y * 7.0 / sweeps as f64).sqrt().max(1e-12);
            assert!((yh - y).abs() <= 4.0 * se + 1e-12, "{yh} vs {y}");
        }
    }
}

#[test]
fn infeasible_delta_reports_hint() {
    let qs = generate_synthetic(3, 6, 4, 2, 5).unwrap();
    let spec = FairnessSpec::new(FairnessMode::MeritWeighted, 0.0, 1.0);
    match TrainingSet::full(&qs, &spec) {
        Err(fairltr::Error::Infeasible { min_feasible_delta }) => assert!(min_feasible_delta > 0.0),
        Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}
