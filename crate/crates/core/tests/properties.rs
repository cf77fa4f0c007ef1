use proptest::prelude::*;

use fairltr::bvn::decompose;
use fairltr::datasets::{merit_weights, parse_letor, Query, QuerySet};
use fairltr::evalmetrics::{expected_dcg, DiscountVector};
use fairltr::fairlp::{
    build_lp, fairness_violation, min_feasible_delta, solve, FairnessMode, FairnessSpec, SolverCache,
};
use fairltr::linalg::Matrix;
use fairltr::scorer::{init_network, predict};
use fairltr::spotrain::{cost_matrix, regret, spo_plus_gradient, spo_plus_loss, LpContext};

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..=9).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0usize..3, n),
        )
    })
}

fn mode() -> impl Strategy<Value = FairnessMode> {
    prop_oneof![
        Just(FairnessMode::None),
        Just(FairnessMode::Unweighted),
        Just(FairnessMode::MeritWeighted)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_policies_are_fair_and_doubly_stochastic(
        (y, groups) in instance(),
        mode in mode(),
        extra in 0.0f64..0.3,
    ) {
        let n = y.len();
        let merit = merit_weights(&y, &groups, 3);
        let base = FairnessSpec::new(mode, 0.0, 1.0);
        let delta = min_feasible_delta(n, &groups, &base, Some(&merit)).unwrap() + extra;
        let spec = base.with_delta(delta);
        let lp = build_lp(n, &groups, &spec, Some(&merit)).unwrap();
        let sol = solve(&lp, &cost_matrix(&y, &DiscountVector::new(n)), None).unwrap();
        sol.policy.check().unwrap();
        if mode != FairnessMode::None {
            for nu in fairness_violation(&sol.policy, &groups, &spec, Some(&merit)).unwrap().into_iter().flatten() {
                prop_assert!(nu.abs() <= delta + 1e-6);
            }
        }
    }

    #[test]
    fn regret_is_non_negative((y, groups) in instance(), seed in 0u64..1000, delta in 0.0f64..0.3) {
        let n = y.len();
        let y_hat: Vec<f64> = (0..n).map(|i| (((seed + i as u64) * 2_654_435_761) % 1000) as f64 / 1000.0 - 0.3).collect();
        let cache = SolverCache::new();
        let spec = FairnessSpec::new(FairnessMode::Unweighted, delta, 1.0);
        let ctx = LpContext { cache: &cache, groups: &groups, spec: &spec, merit: None };
        let r = regret(&y, &y_hat, &DiscountVector::new(n), &ctx).unwrap();
        prop_assert!(r >= -1e-8);
    }

    #[test]
    fn spo_plus_gradient_is_a_subgradient(
        (y, groups) in instance(),
        direction in prop::collection::vec(-1.0f64..1.0, 9),
        offset in prop::collection::vec(-0.5f64..0.5, 9),
        t in 1e-4f64..0.05,
    ) {
        let n = y.len();
        let w = DiscountVector::new(n);
        let y_hat: Vec<f64> = y.iter().zip(&offset).map(|(a, b)| a + b).collect();
        let d = &direction[..n];
        let moved: Vec<f64> = y_hat.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let cache = SolverCache::new();
        let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.1, 1.0);
        let ctx = LpContext { cache: &cache, groups: &groups, spec: &spec, merit: None };
        let base = spo_plus_loss(&y, &y_hat, &w, &ctx).unwrap();
        let after = spo_plus_loss(&y, &moved, &w, &ctx).unwrap();
        let grad = spo_plus_gradient(&y, &y_hat, &w, &ctx).unwrap();
        let slope = grad.frobenius_dot(&cost_matrix(d, &w));
        prop_assert!(after >= base + t * slope - 1e-6, "{after} < {base} + {t}·{slope}");
    }

    #[test]
    fn gradient_entries_lie_in_unit_box((y, groups) in instance(), shift in prop::collection::vec(-1.0f64..1.0, 9)) {
        let n = y.len();
        let y_hat: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let cache = SolverCache::new();
        let spec = FairnessSpec::new(FairnessMode::Unweighted, 0.05, 1.0);
        let ctx = LpContext { cache: &cache, groups: &groups, spec: &spec, merit: None };
        let g = spo_plus_gradient(&y, &y_hat, &DiscountVector::new(n), &ctx).unwrap();
        prop_assert!(g.as_slice().iter().all(|x| x.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn cache_matches_direct_solve((y, groups) in instance(), delta in 0.0f64..0.3) {
        let n = y.len();
        let spec = FairnessSpec::new(FairnessMode::Unweighted, delta, 1.0);
        let cost = cost_matrix(&y, &DiscountVector::new(n));
        let cache = SolverCache::new();
        let cached = cache.solve_cached(&cost, &groups, &spec, None).unwrap();
        let direct = solve(&build_lp(n, &groups, &spec, None).unwrap(), &cost, None).unwrap();
        prop_assert!((cost.frobenius_dot(cached.policy.matrix()) - direct.objective).abs() <= 1e-8);
    }

    #[test]
    fn bvn_reconstructs_solved_policies((y, groups) in instance(), delta in 0.0f64..0.2) {
        let n = y.len();
        let spec = FairnessSpec::new(FairnessMode::Unweighted, delta, 1.0);
        let sol = solve(&build_lp(n, &groups, &spec, None).unwrap(), &cost_matrix(&y, &DiscountVector::new(n)), None).unwrap();
        let d = decompose(&sol.policy).unwrap();
        prop_assert!(d.reconstruct().max_abs_diff(sol.policy.matrix()) <= 1e-6);
        prop_assert!(d.terms.len() <= (n - 1) * (n - 1) + 1);
        let total: f64 = d.terms.iter().map(|t| t.0).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn scoring_is_per_item(k in 1usize..12, seed in 0u64..100, a in 1usize..6, b in 1usize..6) {
        let params = init_network::<f64>(k, seed).unwrap();
        let xa = Matrix::from_vec(a, k, (0..a * k).map(|i| ((i * 7919 + seed as usize) % 97) as f64 / 48.0 - 1.0).collect());
        let xb = Matrix::from_vec(b, k, (0..b * k).map(|i| ((i * 104_729 + 3) % 89) as f64 / 44.0 - 1.0).collect());
        let mut both = xa.as_slice().to_vec();
        both.extend_from_slice(xb.as_slice());
        let joined = predict(&params, &Matrix::from_vec(a + b, k, both)).unwrap();
        let mut separate = predict(&params, &xa).unwrap();
        separate.extend(predict(&params, &xb).unwrap());
        prop_assert_eq!(joined, separate);
    }

    #[test]
    fn letor_round_trip(rows in prop::collection::vec((0u64..4, prop::collection::vec(-5.0f64..5.0, 3), 0usize..2, 0u8..5), 1..20)) {
        let mut queries: Vec<Query> = Vec::new();
        for qid in 0..4u64 {
            let items: Vec<_> = rows.iter().filter(|r| r.0 == qid).collect();
            if items.is_empty() {
                continue;
            }
            let features = Matrix::from_rows(&items.iter().map(|r| r.1.clone()).collect::<Vec<_>>());
            let groups = items.iter().map(|r| r.2).collect();
            let y = items.iter().map(|r| f64::from(r.3)).collect();
            queries.push(Query::new(qid, features, groups, y).unwrap());
        }
        let qs = QuerySet::new(queries, 2, 3).unwrap();
        let back = parse_letor(&qs.to_letor()).unwrap();
        prop_assert_eq!(back.queries, qs.queries);
    }
}

#[test]
fn f32_solver_agrees_with_f64() {
    let y = [0.9, 0.2, 0.6, 0.4, 0.8];
    let groups = [0, 1, 0, 1, 1];
    let spec64 = FairnessSpec::new(FairnessMode::Unweighted, 0.05, 1.0);
    let spec32 = fairltr::fairlp::FairnessSpec::<f32>::new(FairnessMode::Unweighted, 0.05, 1.0);
    let s64 = solve(
        &build_lp(5, &groups, &spec64, None).unwrap(),
        &cost_matrix(&y, &DiscountVector::new(5)),
        None,
    )
    .unwrap();
    let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let s32 = solve(
        &build_lp(5, &groups, &spec32, None).unwrap(),
        &cost_matrix(&y32, &DiscountVector::new(5)),
        None,
    )
    .unwrap();
    assert!((f64::from(s32.objective) - s64.objective).abs() < 1e-4);
}

#[test]
fn expected_dcg_is_linear_in_the_policy() {
    let y = [0.3, 0.7, 0.1];
    let w = DiscountVector::new(3);
    let a = fairltr::fairlp::Policy::<f64>::from_permutation(&[0, 1, 2]);
    let b = fairltr::fairlp::Policy::<f64>::from_permutation(&[2, 0, 1]);
    let mix = fairltr::fairlp::Policy::new(a.matrix().axpby(0.25, b.matrix(), 0.75)).unwrap();
    let lhs = expected_dcg(&mix, &y, &w);
    let rhs = 0.25 * expected_dcg(&a, &y, &w) + 0.75 * expected_dcg(&b, &y, &w);
    assert!((lhs - rhs).abs() < 1e-15);
}
