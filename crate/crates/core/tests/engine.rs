mod common;

use metaprop::engine::{predict_study_effects, StudySummary};
use metaprop::simulate::Xoshiro256;
use metaprop::{fit_model, log_likelihood, FitOptions, MetaProblem, Method, VarianceComponents};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vc(a: f64, b: f64) -> VarianceComponents {
    VarianceComponents { sigma2_xi: a, sigma2_zeta: b }
}

#[test]
fn loglik_matches_dense_evaluation() {
    let mut rng = Xoshiro256::seed_from_u64(11);
    for case in 0..200 {
        let p = common::random_problem(&mut rng, 3, 4, case % 2 == 0);
        assert!(p.m() <= 12);
        let point = vc(0.05 * rng.uniform(), 0.05 * rng.uniform());
        for method in [Method::Reml, Method::Ml] {
            let got = log_likelihood(&p, point, method).unwrap();
            let want = common::dense_loglik(&p, point, method);
            assert!((got - want).abs() <= 1e-8, "case {case} {method}: {got} vs {want}");
        }
    }
}

#[test]
fn zero_components_give_inverse_variance_mean() {
    let mut rng = Xoshiro256::seed_from_u64(12);
    let options = FitOptions { fixed: Some(VarianceComponents::ZERO), ..FitOptions::default() };
    for _ in 0..100 {
        let h = rng.between(2, 8) as usize;
        let p = common::random_problem(&mut rng, h, 6, false);
        let fit = fit_model(&p, &options).unwrap();
        let (mean, var) = common::inverse_variance_mean(&p.y, &p.v);
        assert!((fit.beta[0] - mean).abs() <= 1e-12);
        assert!((fit.se(0).powi(2) - var).abs() <= 1e-12 * var.max(1.0));
    }
}

#[test]
fn gls_matches_dense_solution() {
    let mut rng = Xoshiro256::seed_from_u64(13);
    for _ in 0..50 {
        let p = common::random_problem(&mut rng, 4, 5, true);
        let point = vc(0.02, 0.01);
        let fit = fit_model(&p, &FitOptions { fixed: Some(point), ..FitOptions::default() }).unwrap();
        let (beta, cov) = common::dense_gls(&p, point);
        for i in 0..p.f() {
            assert!((fit.beta[i] - beta[i]).abs() <= 1e-10);
            for j in 0..p.f() {
                assert!((fit.cov_beta[(i, j)] - cov[(i, j)]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn fit_reaches_grid_optimum() {
    let mut rng = Xoshiro256::seed_from_u64(14);
    for case in 0..4 {
        let p = common::random_problem(&mut rng, 3, 4, false);
        let (best, _) = common::grid_optimum(&p, Method::Reml, 0.3);
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        // The grid point is a feasible candidate, so a correct optimizer is
        // never worse than it; the upper bound catches a broken likelihood.
        assert!(fit.loglik >= best - 1e-6, "case {case}: {} < {best}", fit.loglik);
        assert!(fit.loglik <= best + 1e-3, "case {case}: {} >> {best}", fit.loglik);
    }
}

#[test]
fn ml_components_not_larger_than_reml_on_average() {
    let mut rng = Xoshiro256::seed_from_u64(15);
    let (mut ml, mut reml) = (0.0, 0.0);
    for _ in 0..30 {
        let p = common::random_problem(&mut rng, 6, 5, true);
        reml += fit_model(&p, &FitOptions::method(Method::Reml)).unwrap().varcomps.sigma2_xi;
        ml += fit_model(&p, &FitOptions::method(Method::Ml)).unwrap().varcomps.sigma2_xi;
    }
    assert!(ml <= reml);
}

fn permute_studies(p: &MetaProblem, order: &[usize]) -> MetaProblem {
    let starts: Vec<usize> = p.groups.iter().scan(0, |s, &g| {
        let a = *s;
        *s += g;
        Some(a)
    }).collect();
    let mut rows = Vec::new();
    for &j in order {
        rows.extend(starts[j]..starts[j] + p.groups[j]);
    }
    let x = DMatrix::from_fn(p.m(), p.f(), |i, c| p.x[(rows[i], c)]);
    MetaProblem::new(
        rows.iter().map(|&i| p.y[i]).collect(),
        rows.iter().map(|&i| p.v[i]).collect(),
        x,
        p.labels.clone(),
        order.iter().map(|&j| p.groups[j]).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_is_invariant_to_study_order(seed in any::<u64>()) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let p = common::random_problem(&mut rng, 5, 4, true);
        let mut order: Vec<usize> = (0..p.h()).collect();
        rng.shuffle(&mut order);
        let q = permute_studies(&p, &order);
        let a = fit_model(&p, &FitOptions::default()).unwrap();
        let b = fit_model(&q, &FitOptions::default()).unwrap();
        prop_assert!((a.loglik - b.loglik).abs() <= 1e-8);
        prop_assert!((a.beta[0] - b.beta[0]).abs() <= 1e-5);
    }

    #[test]
    fn shifting_effects_shifts_intercept_only(seed in any::<u64>(), shift in -0.5f64..0.5) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let p = common::random_problem(&mut rng, 5, 4, false);
        let shifted = MetaProblem::intercept_only(
            p.y.iter().map(|y| y + shift).collect(), p.v.clone(), p.groups.clone()).unwrap();
        let a = fit_model(&p, &FitOptions::default()).unwrap();
        let b = fit_model(&shifted, &FitOptions::default()).unwrap();
        prop_assert!((b.beta[0] - a.beta[0] - shift).abs() <= 1e-5);
        prop_assert!((a.loglik - b.loglik).abs() <= 1e-8);
        // With singleton studies only the sum of the components is identified.
        let total = |f: &metaprop::FitResult| f.varcomps.sigma2_xi + f.varcomps.sigma2_zeta;
        prop_assert!((total(&a) - total(&b)).abs() <= 1e-5);
    }

    #[test]
    fn loglik_is_finite_and_components_nonnegative(seed in any::<u64>()) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let p = common::random_problem(&mut rng, 4, 6, true);
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        prop_assert!(fit.loglik.is_finite());
        prop_assert!(fit.varcomps.sigma2_xi >= 0.0 && fit.varcomps.sigma2_zeta >= 0.0);
        // The optimum beats every point on a coarse grid.
        for a in [0.0, 0.01, 0.05, 0.2] {
            for b in [0.0, 0.01, 0.05, 0.2] {
                prop_assert!(fit.loglik >= log_likelihood(&p, vc(a, b), Method::Reml).unwrap() - 1e-6);
            }
        }
    }
}

#[test]
fn blups_shrink_toward_pooled_mean() {
    let mut rng = Xoshiro256::seed_from_u64(16);
    let p = common::random_problem(&mut rng, 8, 6, false);
    let fit = fit_model(&p, &FitOptions::default()).unwrap();
    let blup = predict_study_effects(&fit, &p, StudySummary::Blup);
    let mut start = 0;
    for (j, b) in blup.iter().enumerate() {
        // Study mean weighted by the within-study marginal precision.
        let idx = start..start + p.groups[j];
        start += p.groups[j];
        let w: Vec<f64> = idx.clone().map(|i| 1.0 / (fit.varcomps.sigma2_zeta + p.v[i])).collect();
        let mean = idx.zip(&w).map(|(i, wi)| wi * p.y[i]).sum::<f64>() / w.iter().sum::<f64>();
        let (shrunk, raw) = (b.kappa_hat - fit.beta[0], mean - fit.beta[0]);
        assert!(shrunk.abs() <= raw.abs() + 1e-12 && shrunk * raw >= 0.0);
    }
}
