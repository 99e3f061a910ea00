//! Proportion transforms, their sampling variances and back-transforms.

mod shapiro;

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Dataset;

pub use shapiro::{shapiro_wilk, ShapiroWilk};

/// Slack allowed outside `[0, π/2]` before `ft_inverse` rejects its input.
const DOMAIN_TOL: f64 = 1e-9;

/// A transformed accuracy and its sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectSample {
    pub theta: f64,
    pub variance: f64,
    pub k: u64,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    FreemanTukey,
    Arcsine,
    Logit,
    Log,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] =
        [TransformKind::FreemanTukey, TransformKind::Arcsine, TransformKind::Logit, TransformKind::Log];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::FreemanTukey => "double-arcsine",
            TransformKind::Arcsine => "arcsine",
            TransformKind::Logit => "logit",
            TransformKind::Log => "log",
        }
    }
}

/// Freeman–Tukey double arcsine of `k` successes in `n` trials.
pub fn ft_transform(k: u64, n: u64) -> Result<EffectSample> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds n = {n}")));
    }
    let n1 = (n + 1) as f64;
    let theta = 0.5 * (((k as f64) / n1).sqrt().asin() + (((k + 1) as f64) / n1).sqrt().asin());
    Ok(EffectSample { theta, variance: 1.0 / (4 * n + 2) as f64, k, n })
}

/// Double arcsine at a real-valued sample size (`k = 0` and `k = n` ends).
fn ft_endpoints(n: f64) -> (f64, f64) {
    let lo = 0.5 * (1.0 / (n + 1.0)).sqrt().asin();
    let hi = 0.5 * ((n / (n + 1.0)).sqrt().asin() + FRAC_PI_2);
    (lo, hi)
}

/// Back-transform a double-arcsine value to a proportion.
///
/// `n_equiv` is the trial size for a single trial, or the inverse variance
/// of a pooled estimate. Values at or below the transform of `k = 0` map to
/// 0, values at or above the transform of `k = n` map to 1.
///
/// An infinite `n_equiv` gives the large-sample limit `sin²(t)`.
pub fn ft_inverse(t: f64, n_equiv: f64) -> Result<f64> {
    if n_equiv.is_nan() || n_equiv <= 0.0 {
        return Err(Error::invalid(format!("n_equiv must be positive, got {n_equiv}")));
    }
    if !(-DOMAIN_TOL..=FRAC_PI_2 + DOMAIN_TOL).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, pi/2]")));
    }
    if n_equiv.is_infinite() {
        return Ok(t.clamp(0.0, FRAC_PI_2).sin().powi(2));
    }
    let (lo, hi) = ft_endpoints(n_equiv);
    if t <= lo {
        return Ok(0.0);
    }
    if t >= hi {
        return Ok(1.0);
    }
    let s = (2.0 * t).sin();
    let c = (2.0 * t).cos();
    let inner = s + (s - 1.0 / s) / n_equiv;
    let radicand = (1.0 - inner * inner).clamp(0.0, 1.0);
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    Ok((0.5 * (1.0 - sign * radicand.sqrt())).clamp(0.0, 1.0))
}

/// Clamp `t` into the double-arcsine range, then back-transform.
pub fn ft_inverse_clamped(t: f64, n_equiv: f64) -> Result<f64> {
    ft_inverse(t.clamp(0.0, FRAC_PI_2), n_equiv)
}

/// The single-arcsine, logit and log transforms of a proportion.
pub fn alt_transform(p: f64, n: u64, kind: TransformKind) -> Result<EffectSample> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("proportion {p} outside [0, 1]")));
    }
    let nf = n as f64;
    let k = (p * nf).round() as u64;
    let (theta, variance) = match kind {
        TransformKind::FreemanTukey => return ft_transform(k, n),
        TransformKind::Arcsine => (p.sqrt().asin(), 1.0 / (4.0 * nf)),
        TransformKind::Logit => {
            if p <= 0.0 || p >= 1.0 {
                return Err(Error::invalid(format!("logit undefined at p = {p}")));
            }
            ((p / (1.0 - p)).ln(), 1.0 / (nf * p * (1.0 - p)))
        }
        TransformKind::Log => {
            if p <= 0.0 {
                return Err(Error::invalid("log undefined at p = 0"));
            }
            (p.ln(), (1.0 - p) / (nf * p))
        }
    };
    Ok(EffectSample { theta, variance, k, n })
}

/// Double-arcsine effect sizes for every trial, in dataset order.
pub fn effect_sizes(dataset: &Dataset) -> Vec<EffectSample> {
    dataset
        .trials()
        .iter()
        .map(|t| ft_transform(t.k, t.n).expect("dataset trials are validated"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub kind: TransformKind,
    /// `None` when some trial cannot be transformed under `kind`.
    pub result: Option<ShapiroWilk>,
    pub skipped: Option<String>,
}

/// Shapiro–Wilk normality of the transformed accuracies under each transform.
pub fn transform_diagnostic(dataset: &Dataset) -> Result<Vec<DiagnosticRow>> {
    if dataset.m() < 3 {
        return Err(Error::InsufficientData { required: 3, available: dataset.m() });
    }
    let mut rows = Vec::new();
    for kind in TransformKind::ALL {
        let values: Result<Vec<f64>> = dataset
            .trials()
            .iter()
            .map(|t| match kind {
                TransformKind::FreemanTukey => ft_transform(t.k, t.n).map(|e| e.theta),
                _ => alt_transform(t.proportion(), t.n, kind).map(|e| e.theta),
            })
            .collect();
        match values {
            Ok(v) => rows.push(DiagnosticRow { kind, result: Some(shapiro_wilk(&v)?), skipped: None }),
            Err(e) => rows.push(DiagnosticRow { kind, result: None, skipped: Some(e.to_string()) }),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn ft_small_cases() {
        let e = ft_transform(0, 1).unwrap();
        assert_abs_diff_eq!(e.theta, PI / 8.0, epsilon = 1e-15);
        assert_eq!(e.variance, 1.0 / 6.0);
        let e = ft_transform(1, 1).unwrap();
        assert_abs_diff_eq!(e.theta, 3.0 * PI / 8.0, epsilon = 1e-15);
        let e = ft_transform(80, 100).unwrap();
        // 50-digit mpmath: 1.103474069733206...
        assert_abs_diff_eq!(e.theta, 1.1034740697332062, epsilon = 1e-14);
        assert_eq!(e.variance, 1.0 / 402.0);
    }

    #[test]
    fn ft_errors() {
        assert!(ft_transform(2, 1).is_err());
        assert!(ft_transform(0, 0).is_err());
    }

    #[test]
    fn inverse_midpoint_and_limits() {
        for n in [1.0, 10.0, 1e6] {
            assert_abs_diff_eq!(ft_inverse(PI / 4.0, n).unwrap(), 0.5, epsilon = 1e-12);
        }
        assert_eq!(ft_inverse(0.0, 50.0).unwrap(), 0.0);
        assert_eq!(ft_inverse(1e-6, 50.0).unwrap(), 0.0);
        assert_eq!(ft_inverse(FRAC_PI_2, 50.0).unwrap(), 1.0);
        let t = ft_transform(80, 100).unwrap().theta;
        assert_abs_diff_eq!(ft_inverse(t, 100.0).unwrap(), 0.8, epsilon = 1e-6);
    }

    #[test]
    fn inverse_errors() {
        assert!(ft_inverse(-0.1, 10.0).is_err());
        assert!(ft_inverse(1.6, 10.0).is_err());
        assert!(ft_inverse(0.5, 0.0).is_err());
        assert!(ft_inverse(f64::NAN, 10.0).is_err());
        assert!(ft_inverse(-1e-10, 10.0).is_ok());
        assert_abs_diff_eq!(ft_inverse(0.3, f64::INFINITY).unwrap(), 0.3f64.sin().powi(2));
    }

    #[test]
    fn alternative_transforms() {
        let a = alt_transform(0.5, 100, TransformKind::Arcsine).unwrap();
        assert_abs_diff_eq!(a.theta, PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.variance, 0.0025, epsilon = 1e-15);
        let l = alt_transform(0.5, 100, TransformKind::Logit).unwrap();
        assert_eq!(l.theta, 0.0);
        assert_abs_diff_eq!(l.variance, 0.04, epsilon = 1e-15);
        assert!(alt_transform(1.0, 100, TransformKind::Logit).is_err());
        assert!(alt_transform(0.0, 100, TransformKind::Logit).is_err());
        assert!(alt_transform(0.0, 100, TransformKind::Log).is_err());
        let g = alt_transform(0.25, 100, TransformKind::Log).unwrap();
        assert_abs_diff_eq!(g.variance, 0.75 / 25.0, epsilon = 1e-15);
    }

    #[test]
    fn strictly_increasing_in_k() {
        for n in 1..=200u64 {
            let mut prev = -1.0;
            for k in 0..=n {
                let t = ft_transform(k, n).unwrap().theta;
                assert!(t > prev, "n={n} k={k}");
                assert!((0.0..=FRAC_PI_2).contains(&t));
                prev = t;
            }
        }
    }

    #[test]
    fn variance_is_exact() {
        for n in 1..=10_000u64 {
            let v = ft_transform(0, n).unwrap().variance;
            assert_eq!(v, 1.0 / ((4 * n + 2) as f64));
            assert_eq!((1.0 / v).round() as u64, 4 * n + 2);
        }
    }

    proptest! {
        #[test]
        fn complement_symmetry(n in 1u64..100_000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let a = ft_transform(k, n).unwrap().theta;
            let b = ft_transform(n - k, n).unwrap().theta;
            prop_assert!((a + b - FRAC_PI_2).abs() <= 1e-12);
        }

        #[test]
        fn round_trip(n in 2u64..200_000, frac in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * frac).floor() as u64;
            prop_assume!(k < n);
            let t = ft_transform(k, n).unwrap().theta;
            let p = ft_inverse(t, n as f64).unwrap();
            prop_assert!((p - k as f64 / n as f64).abs() <= 1e-6);
        }
    }
}
