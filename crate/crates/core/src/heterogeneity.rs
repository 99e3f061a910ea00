//! Heterogeneity statistics: Cochran's Q, the pooled sampling variance,
//! level-wise I² and level-wise R² against the null model.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::engine::{weighted_least_squares, VARIANCE_FLOOR, FitResult, MetaProblem, VarianceComponents};
use crate::error::{Error, Result};
use crate::stats::chisq_upper;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QTest {
    pub q: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Residual heterogeneity statistic `Q = rᵀWr` after a weighted least
/// squares fit with `W = diag(1/v)`, on `m - f` degrees of freedom.
pub fn cochran_q(y: &[f64], x: &DMatrix<f64>, v: &[f64]) -> Result<QTest> {
    let (m, f) = (y.len(), x.ncols());
    if f >= m {
        return Err(Error::InsufficientData { required: f + 1, available: m });
    }
    if x.nrows() != m || v.len() != m {
        return Err(Error::invalid("inconsistent dimensions"));
    }
    let (_, resid, _) = weighted_least_squares(y, x, v)?;
    let q: f64 = resid.iter().zip(v).map(|(r, s)| r * r / s).sum();
    let df = m - f;
    Ok(QTest { q, df, p_value: chisq_upper(q, df as f64) })
}

/// Typical within-trial sampling variance
/// `σ²_ε = (m-1)·Σw / ((Σw)² - Σw²)` with `w = 1/v`.
pub fn pooled_sampling_variance(v: &[f64]) -> Result<f64> {
    let m = v.len();
    if m < 2 {
        return Err(Error::InsufficientData { required: 2, available: m });
    }
    if let Some(bad) = v.iter().find(|&&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::invalid(format!("sampling variance must be positive, got {bad}")));
    }
    let sw: f64 = v.iter().map(|s| 1.0 / s).sum();
    let sw2: f64 = v.iter().map(|s| 1.0 / (s * s)).sum();
    Ok((m - 1) as f64 * sw / (sw * sw - sw2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ISquared {
    pub xi: f64,
    pub zeta: f64,
    pub total: f64,
}

/// Shares of `σ²_ξ + σ²_ζ + σ²_ε` due to each heterogeneity level.
pub fn i_squared_levels(varcomps: VarianceComponents, sigma2_eps: f64) -> Result<ISquared> {
    varcomps.validate()?;
    if !(sigma2_eps.is_finite() && sigma2_eps >= 0.0) {
        return Err(Error::invalid(format!("sigma2_eps must be >= 0, got {sigma2_eps}")));
    }
    let total = varcomps.sigma2_xi + varcomps.sigma2_zeta + sigma2_eps;
    if total <= 0.0 {
        return Err(Error::invalid("total variance is zero"));
    }
    let xi = varcomps.sigma2_xi / total;
    let zeta = varcomps.sigma2_zeta / total;
    Ok(ISquared { xi, zeta, total: xi + zeta })
}

/// Proportional reduction of each variance component relative to the null
/// model. `None` where the null component is zero (at the optimizer floor).
/// Negative values are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSquared {
    pub xi: Option<f64>,
    pub zeta: Option<f64>,
}

pub fn r_squared(fit_x: &FitResult, fit_null: &FitResult) -> Result<RSquared> {
    if fit_x.method != fit_null.method {
        return Err(Error::invalid("R² needs both fits from the same estimation method"));
    }
    if fit_x.m != fit_null.m {
        return Err(Error::invalid("R² needs both fits on the same data"));
    }
    let ratio = |num: f64, den: f64| if den > VARIANCE_FLOOR { Some(1.0 - num / den) } else { None };
    Ok(RSquared {
        xi: ratio(fit_x.varcomps.sigma2_xi, fit_null.varcomps.sigma2_xi),
        zeta: ratio(fit_x.varcomps.sigma2_zeta, fit_null.varcomps.sigma2_zeta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneityReport {
    pub q: f64,
    pub q_df: usize,
    pub q_pvalue: f64,
    pub sigma2_eps: f64,
    pub i2_xi: f64,
    pub i2_zeta: f64,
    pub i2_total: f64,
}

impl HeterogeneityReport {
    pub fn compute(fit: &FitResult, problem: &MetaProblem) -> Result<Self> {
        let q = cochran_q(&problem.y, &problem.x, &problem.v)?;
        let sigma2_eps = pooled_sampling_variance(&problem.v)?;
        let i2 = i_squared_levels(fit.varcomps, sigma2_eps)?;
        Ok(HeterogeneityReport {
            q: q.q,
            q_df: q.df,
            q_pvalue: q.p_value,
            sigma2_eps,
            i2_xi: i2.xi,
            i2_zeta: i2.zeta,
            i2_total: i2.total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit_model, FitOptions};
    use approx::assert_abs_diff_eq;

    fn ones(m: usize) -> DMatrix<f64> {
        DMatrix::from_element(m, 1, 1.0)
    }

    #[test]
    fn q_identical_effects() {
        let q = cochran_q(&[0.5, 0.5], &ones(2), &[0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(q.q, 0.0, epsilon = 1e-20);
        assert_eq!(q.df, 1);
        assert_abs_diff_eq!(q.p_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn q_two_trials() {
        let q = cochran_q(&[0.5, 1.0], &ones(2), &[0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(q.q, 0.5, epsilon = 1e-14);
        assert_eq!(q.df, 1);
        // scipy.stats.chi2.sf(0.5, 1)
        assert_abs_diff_eq!(q.p_value, 0.47950012218695337, epsilon = 1e-9);
    }

    #[test]
    fn q_saturated_is_an_error() {
        assert!(cochran_q(&[0.5, 1.0], &DMatrix::identity(2, 2), &[0.25, 0.25]).is_err());
    }

    #[test]
    fn pooled_variance_cases() {
        assert_abs_diff_eq!(pooled_sampling_variance(&[0.3; 7]).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(pooled_sampling_variance(&[0.1, 0.2]).unwrap(), 0.15, epsilon = 1e-14);
        assert!(pooled_sampling_variance(&[0.1]).is_err());
    }

    #[test]
    fn level_shares() {
        let i2 = i_squared_levels(VarianceComponents::new(0.020, 0.008).unwrap(), 1e-4).unwrap();
        assert_abs_diff_eq!(i2.xi, 0.71, epsilon = 0.01);
        assert_abs_diff_eq!(i2.zeta, 0.29, epsilon = 0.01);
        let i2 = i_squared_levels(VarianceComponents::new(0.0, 0.0).unwrap(), 0.3).unwrap();
        assert_eq!((i2.xi, i2.zeta, i2.total), (0.0, 0.0, 0.0));
        assert!(i_squared_levels(VarianceComponents::ZERO, 0.0).is_err());
    }

    #[test]
    fn r_squared_identity_and_sign() {
        let p = MetaProblem::intercept_only(vec![0.9, 1.1, 1.3, 1.0, 1.2, 0.8], vec![0.01; 6], vec![2, 2, 2]).unwrap();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let r = r_squared(&fit, &fit).unwrap();
        assert_eq!((r.xi, r.zeta), (Some(0.0), Some(0.0)));

        let mut worse = fit.clone();
        worse.varcomps.sigma2_xi = fit.varcomps.sigma2_xi * 1.01;
        assert!(r_squared(&worse, &fit).unwrap().xi.unwrap() < 0.0);

        let mut null_zero = fit.clone();
        null_zero.varcomps.sigma2_xi = 0.0;
        assert_eq!(r_squared(&fit, &null_zero).unwrap().xi, None);
    }

    #[test]
    fn r_squared_from_rounded_values() {
        let mut a = fit_model(
            &MetaProblem::intercept_only(vec![0.9, 1.1, 1.3, 1.0], vec![0.01; 4], vec![2, 2]).unwrap(),
            &FitOptions::default(),
        )
        .unwrap();
        let mut null = a.clone();
        a.varcomps = VarianceComponents::new(0.013, 0.006).unwrap();
        null.varcomps = VarianceComponents::new(0.020, 0.008).unwrap();
        let r = r_squared(&a, &null).unwrap();
        assert_abs_diff_eq!(r.xi.unwrap(), 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!(r.zeta.unwrap(), 0.25, epsilon = 1e-12);
    }
}
