//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Everything here works on dense matrices.
#![allow(dead_code)]

use std::f64::consts::PI;

use metaprop::engine::{MetaProblem, Method, VarianceComponents};
use metaprop::simulate::{ModeratorKind, ModeratorLevel, ModeratorSpec, Xoshiro256};
use metaprop::SimConfig;
use nalgebra::{DMatrix, DVector};

/// `V = σ²_ξ·(same study) + σ²_ζ·I + diag(v)`, built entry by entry.
pub fn dense_v(groups: &[usize], vc: VarianceComponents, v: &[f64]) -> DMatrix<f64> {
    let study: Vec<usize> = groups.iter().enumerate().flat_map(|(j, &n)| vec![j; n]).collect();
    let m = v.len();
    DMatrix::from_fn(m, m, |a, b| {
        let mut x = 0.0;
        if study[a] == study[b] {
            x += vc.sigma2_xi;
        }
        if a == b {
            x += vc.sigma2_zeta + v[a];
        }
        x
    })
}

/// ML or REML log-likelihood by explicit inversion.
pub fn dense_loglik(p: &MetaProblem, vc: VarianceComponents, method: Method) -> f64 {
    let (m, f) = (p.m(), p.f());
    let v = dense_v(&p.groups, vc, &p.v);
    let logdet_v = v.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
    let vinv = v.try_inverse().unwrap();
    let y = DVector::from_column_slice(&p.y);
    let xtvx = p.x.transpose() * &vinv * &p.x;
    let beta = xtvx.clone().try_inverse().unwrap() * p.x.transpose() * &vinv * &y;
    let r = &y - &p.x * beta;
    let quad = (r.transpose() * &vinv * &r)[(0, 0)];
    match method {
        Method::Ml => -0.5 * (m as f64 * (2.0 * PI).ln() + logdet_v + quad),
        Method::Reml => {
            let logdet_info = xtvx.determinant().ln();
            -0.5 * ((m - f) as f64 * (2.0 * PI).ln() + logdet_v + logdet_info + quad)
        }
    }
}

/// Dense GLS estimate and its covariance.
pub fn dense_gls(p: &MetaProblem, vc: VarianceComponents) -> (DVector<f64>, DMatrix<f64>) {
    let vinv = dense_v(&p.groups, vc, &p.v).try_inverse().unwrap();
    let cov = (p.x.transpose() * &vinv * &p.x).try_inverse().unwrap();
    let beta = &cov * p.x.transpose() * &vinv * DVector::from_column_slice(&p.y);
    (beta, cov)
}

/// Best log-likelihood on a grid: step 1e-2 over `[0, hi]²`, then step 1e-4
/// within ±0.02 of the coarse winner.
pub fn grid_optimum(p: &MetaProblem, method: Method, hi: f64) -> (f64, VarianceComponents) {
    let eval = |a: f64, b: f64| {
        let vc = VarianceComponents { sigma2_xi: a, sigma2_zeta: b };
        (dense_loglik(p, vc, method), vc)
    };
    let mut best = eval(0.0, 0.0);
    let coarse = (hi / 1e-2).round() as usize;
    for i in 0..=coarse {
        for j in 0..=coarse {
            let c = eval(i as f64 * 1e-2, j as f64 * 1e-2);
            if c.0 > best.0 {
                best = c;
            }
        }
    }
    let (a0, b0) = (best.1.sigma2_xi, best.1.sigma2_zeta);
    for i in -200i32..=200 {
        for j in -200i32..=200 {
            let (a, b) = (a0 + i as f64 * 1e-4, b0 + j as f64 * 1e-4);
            if a < 0.0 || b < 0.0 {
                continue;
            }
            let c = eval(a, b);
            if c.0 > best.0 {
                best = c;
            }
        }
    }
    best
}

/// Random instance with `h` studies of 1..=`max_size` trials, an intercept
/// and optionally one covariate.
pub fn random_problem(rng: &mut Xoshiro256, h: usize, max_size: u64, covariate: bool) -> MetaProblem {
    let groups: Vec<usize> = (0..h).map(|_| rng.between(1, max_size) as usize).collect();
    let m: usize = groups.iter().sum();
    let xi: Vec<f64> = (0..h).map(|_| 0.1 * rng.normal()).collect();
    let mut y = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    let mut cov = Vec::with_capacity(m);
    for (j, &n) in groups.iter().enumerate() {
        for _ in 0..n {
            let x = rng.normal();
            let vi = 0.002 + 0.03 * rng.uniform();
            y.push(1.0 + 0.05 * x + xi[j] + 0.07 * rng.normal() + vi.sqrt() * rng.normal());
            v.push(vi);
            cov.push(x);
        }
    }
    if covariate && m > 3 {
        let x = DMatrix::from_fn(m, 2, |i, c| if c == 0 { 1.0 } else { cov[i] });
        MetaProblem::new(y, v, x, vec!["intercept".into(), "x".into()], groups).unwrap()
    } else {
        MetaProblem::intercept_only(y, v, groups).unwrap()
    }
}

/// Weighted mean and its variance under `w = 1/v`.
pub fn inverse_variance_mean(y: &[f64], v: &[f64]) -> (f64, f64) {
    let sw: f64 = v.iter().map(|s| 1.0 / s).sum();
    let num: f64 = y.iter().zip(v).map(|(a, s)| a / s).sum();
    (num / sw, 1.0 / sw)
}

/// `Q = Σ w (y - ȳ_w)²` for an intercept-only model, by direct summation.
pub fn q_by_summation(y: &[f64], v: &[f64]) -> f64 {
    let (mean, _) = inverse_variance_mean(y, v);
    y.iter().zip(v).map(|(a, s)| (a - mean).powi(2) / s).sum()
}

/// Read a fixture from `crates/core/tests/fixtures`.
pub fn fixture(name: &str) -> serde_json::Value {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap()
}

/// Simulation at the example layout where each of `features` trial-level
/// moderators has a real effect, so every added feature improves the fit.
pub fn nested_improving_config(features: usize, seed: u64) -> SimConfig {
    let mut config = SimConfig::example_null(seed);
    config.moderators = (0..features)
        .map(|i| ModeratorSpec {
            name: format!("x{:02}", i + 1),
            effect: 0.15 / (1.0 + 0.05 * i as f64),
            kind: if i % 3 == 2 { ModeratorKind::Binary } else { ModeratorKind::Numeric },
            level: ModeratorLevel::Trial,
        })
        .collect();
    config
}
