mod common;

use nalgebra::{DMatrix, DVector};
use neyman::data::{read_csv, write_csv_to};
use neyman::outcome::score_residual;
use neyman::prelude::*;
use proptest::prelude::*;

fn dataset_strategy(max_n: usize, k: usize) -> impl Strategy<Value = Dataset> {
    (4..=max_n).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0_f64, k), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-5.0..5.0_f64, n),
        )
            .prop_filter_map("needs both arms twice", |(rows, d, y)| {
                let treated = d.iter().filter(|&&v| v).count();
                if treated < 2 || d.len() - treated < 2 {
                    return None;
                }
                let d: Vec<u8> = d.into_iter().map(u8::from).collect();
                Dataset::from_rows(&rows, &d, &y).ok()
            })
    })
}

fn same_ray_pair() -> impl Strategy<Value = (f64, f64)> {
    (any::<bool>(), 1.0001..50.0_f64, 1.0001..50.0_f64)
        .prop_map(|(neg, a, b)| if neg { (-a, -b) } else { (a, b) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bregman_is_nonnegative((a, b) in same_ray_pair()) {
        prop_assert!(bregman_pointwise(ConvexSpec::KL, a, b).unwrap() >= 0.0);
        prop_assert!(bregman_pointwise(ConvexSpec::SQUARED, a, b).unwrap() >= 0.0);
    }

    #[test]
    fn squared_bregman_is_squared_difference(a in -1e3..1e3_f64, b in -1e3..1e3_f64) {
        prop_assert_eq!(bregman_pointwise(ConvexSpec::SQUARED, a, b).unwrap(), (a - b).powi(2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bregman_vanishes_on_the_diagonal(a in 1.0001..1e3_f64, neg in any::<bool>()) {
        let a = if neg { -a } else { a };
        prop_assert_eq!(bregman_pointwise(ConvexSpec::KL, a, a).unwrap(), 0.0);
        prop_assert_eq!(bregman_pointwise(ConvexSpec::SQUARED, a, a).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact(ds in dataset_strategy(30, 3)) {
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn covariate_only_basis_ignores_arm(x in prop::collection::vec(-3.0..3.0_f64, 2), degree in 0usize..4) {
        for kind in [BasisKind::Raw, BasisKind::RawIntercept, BasisKind::Intercept, BasisKind::Polynomial { degree }] {
            let b = BasisSpec::new(kind, false, 2).unwrap();
            prop_assert_eq!(b.eval(true, &x).unwrap(), b.eval(false, &x).unwrap());
        }
    }

    #[test]
    fn voronoi_rows_have_one_active_cell_per_arm(
        ds in dataset_strategy(20, 2),
        q in prop::collection::vec(-2.0..2.0_f64, 2),
    ) {
        let basis = build_voronoi_basis(&ds, Metric::Standardized).unwrap();
        for arm in [true, false] {
            let row = basis.eval(arm, &q).unwrap();
            let active: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
            prop_assert_eq!(active.len(), 1);
            prop_assert_eq!(row[active[0]], 1.0);
            prop_assert_eq!(ds.treated(active[0]), arm);
        }
    }

    #[test]
    fn ridge_shrinks_squared_coefficients(ds in dataset_strategy(30, 2)) {
        let basis = BasisSpec::new(BasisKind::RawIntercept, true, 2).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-3, 1e-2, 1e-1, 1.0] {
            let cfg = FitConfig { lambda, ..FitConfig::default() };
            let Ok(fit) = fit_riesz(ConvexSpec::SQUARED, &basis, &ds, &cfg) else { continue };
            let norm = fit.pair.beta().unwrap().norm();
            prop_assert!(norm <= last * (1.0 + 1e-9));
            prop_assert!(fit.objective <= fit.initial_objective + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn kl_weights_exceed_one(ds in dataset_strategy(30, 2), lambda in 0.0..0.5_f64) {
        let basis = BasisSpec::new(BasisKind::RawIntercept, false, 2).unwrap();
        let cfg = FitConfig { lambda, ..FitConfig::default() };
        // λ = 0 on separable draws has no minimizer
        if let Ok(fit) = fit_riesz(ConvexSpec::KL, &basis, &ds, &cfg) {
            prop_assert!(fit.objective <= fit.initial_objective);
            let beta = fit.pair.beta().unwrap();
            for i in 0..ds.n() {
                let phi = basis.eval(true, ds.x(i)).unwrap();
                let t: f64 = phi.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                // w = 1 + exp(∓t) only rounds to 1 once the exponential drops below an ulp
                let (w1, w0) = (fit.pair.w1(ds.x(i)), fit.pair.w0(ds.x(i)));
                prop_assert!(w1 > 1.0 || (w1 == 1.0 && (-t).exp() < f64::EPSILON));
                prop_assert!(w0 > 1.0 || (w0 == 1.0 && t.exp() < f64::EPSILON));
            }
        } else {
            prop_assert_eq!(lambda, 0.0);
        }
    }

    #[test]
    fn sbw_weights_have_minimal_norm(ds in dataset_strategy(30, 1), seed in any::<u64>()) {
        let basis = BasisSpec::new(BasisKind::RawIntercept, true, 1).unwrap();
        let Ok(sol) = solve_sbw_dual(&ds, &basis) else { return Ok(()) };
        let (a, _) = common::sbw_system(&ds, &basis);
        let n = ds.n();
        let am = DMatrix::from_fn(a.len(), n, |r, c| a[r][c]);
        // random direction projected onto the null space of A
        let mut r = common::rng(seed);
        let z = DVector::from_fn(n, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0));
        let pinv = am.clone().pseudo_inverse(1e-12).unwrap();
        let null = &z - &pinv * (&am * &z);
        let alpha = DVector::from_column_slice(&sol.weights.w);
        let perturbed = &alpha + &null;
        prop_assert!((&am * &null).amax() < 1e-8);
        prop_assert!(perturbed.norm() >= alpha.norm() - 1e-9);
    }

    #[test]
    fn neyman_error_is_affine_with_unit_slope(ds in dataset_strategy(30, 2), t in -10.0..10.0_f64) {
        let mu = fit_outcome(&ds, &BasisSpec::new(BasisKind::RawIntercept, true, 2).unwrap()).unwrap();
        let alpha = RieszWeightPair::logistic(
            BasisSpec::new(BasisKind::RawIntercept, false, 2).unwrap(),
            vec![0.1, -0.3, 0.2],
        )
        .unwrap();
        let base = neyman_error(&ds, &mu, &alpha, 0.0);
        let l = neyman_error(&ds, &mu, &alpha, t);
        prop_assert!((l - base + t).abs() <= 4.0 * f64::EPSILON * (base.abs() + t.abs()));
        let tau = estimate_onestep(&ds, &mu, &alpha).tau_hat;
        prop_assert!(neyman_error(&ds, &mu, &alpha, tau).abs() <= 4.0 * f64::EPSILON * (1.0 + tau.abs()));
    }

    #[test]
    fn tmle_update_is_idempotent(ds in dataset_strategy(30, 2)) {
        let mu = fit_outcome(&ds, &BasisSpec::new(BasisKind::Raw, true, 2).unwrap()).unwrap();
        let alpha = RieszWeightPair::linear(BasisSpec::one_hot_arm(2), vec![1.7, 2.3]).unwrap();
        let once = tmle_update(&mu, &ds, &alpha).unwrap();
        let twice = tmle_update(&once, &ds, &alpha).unwrap();
        prop_assert!(twice.fluctuation_eps().unwrap().abs() < 1e-12);
        let scale: f64 = ds.outcomes().iter().map(|y| 2.3 * (y.abs() + 1.0)).sum();
        prop_assert!(score_residual(&once, &ds, &alpha).abs() <= 1e-12 * scale);
    }

    #[test]
    fn matching_forms_agree(ds in dataset_strategy(30, 2), m in 1usize..3) {
        let assign = match_units(&ds, m, Metric::Standardized).unwrap();
        let w = matching_weights(&assign, &ds).unwrap();
        // every unit contributes itself plus M matches in total
        let total: f64 = w.w.iter().map(|v| v.abs()).sum();
        prop_assert!((total - 2.0 * ds.n() as f64).abs() < 1e-9);
        for (i, matched) in assign.matches.iter().enumerate() {
            prop_assert_eq!(matched.len(), m);
            prop_assert!(matched.iter().all(|&j| ds.treated(j) != ds.treated(i)));
        }
        let weighting: f64 = w.w.iter().zip(ds.outcomes()).map(|(a, y)| a * y).sum::<f64>() / ds.n() as f64;
        let imputed = neyman::matching::imputation_estimate(&assign, &ds);
        prop_assert!((weighting - imputed).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), n in 2usize..50) {
        let spec = DgpSpec::linear_logit(2);
        let a = simulate(&spec, n, seed).unwrap();
        let b = simulate(&spec, n, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
