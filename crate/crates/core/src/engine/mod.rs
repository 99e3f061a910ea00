//! Three-level random-effects model: marginal covariance, (RE)ML likelihood,
//! variance-component estimation, GLS fixed effects and study predictions.
//!
//! Observed effect `y_ij = x_ijᵀβ + ξ_j + ζ_ij + ε_ij` with
//! `ξ_j ~ N(0, σ²_ξ)` between studies, `ζ_ij ~ N(0, σ²_ζ)` within studies and
//! `ε_ij ~ N(0, v_ij)` the known sampling error.

mod covariance;
mod likelihood;
mod optimize;
mod predict;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, DesignMatrix, INTERCEPT};
use crate::stats::{pnorm_upper, z_two_sided};
use crate::transforms::{effect_sizes, ft_inverse_clamped};

pub use covariance::{marginal_covariance, BlockCovariance};
pub use likelihood::log_likelihood;
pub use predict::{
    conditional_residuals, fixed_effect_residuals, predict_study_effect, predict_study_effects, StudyEffect,
    StudySummary,
};

/// Lower bound for the variance components during optimization.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Between-study variance σ²_ξ.
    pub sigma2_xi: f64,
    /// Within-study variance σ²_ζ.
    pub sigma2_zeta: f64,
}

impl VarianceComponents {
    pub const ZERO: VarianceComponents = VarianceComponents { sigma2_xi: 0.0, sigma2_zeta: 0.0 };

    pub fn new(sigma2_xi: f64, sigma2_zeta: f64) -> Result<Self> {
        let vc = VarianceComponents { sigma2_xi, sigma2_zeta };
        vc.validate()?;
        Ok(vc)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("sigma2_xi", self.sigma2_xi), ("sigma2_zeta", self.sigma2_zeta)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Reml => "reml",
            Method::Ml => "ml",
        })
    }
}

/// Effect sizes, sampling variances, design and study layout for one fit.
///
/// Trials must be grouped contiguously by study; `groups` holds the study
/// sizes in order.
#[derive(Debug, Clone)]
pub struct MetaProblem {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
    pub groups: Vec<usize>,
    pub study_ids: Vec<String>,
    rows: Vec<f64>,
}

impl MetaProblem {
    pub fn new(
        y: Vec<f64>,
        v: Vec<f64>,
        x: DMatrix<f64>,
        labels: Vec<String>,
        groups: Vec<usize>,
    ) -> Result<Self> {
        let study_ids = (1..=groups.len()).map(|j| format!("S{j}")).collect();
        Self::with_studies(y, v, x, labels, groups, study_ids)
    }

    pub fn with_studies(
        y: Vec<f64>,
        v: Vec<f64>,
        x: DMatrix<f64>,
        labels: Vec<String>,
        groups: Vec<usize>,
        study_ids: Vec<String>,
    ) -> Result<Self> {
        let m = y.len();
        if m == 0 {
            return Err(Error::InsufficientData { required: 1, available: 0 });
        }
        if v.len() != m || x.nrows() != m || groups.iter().sum::<usize>() != m {
            return Err(Error::invalid("inconsistent problem dimensions"));
        }
        if labels.len() != x.ncols() || study_ids.len() != groups.len() {
            return Err(Error::invalid("label counts do not match"));
        }
        if groups.contains(&0) {
            return Err(Error::invalid("empty study block"));
        }
        if let Some(bad) = v.iter().find(|&&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!("sampling variance must be positive, got {bad}")));
        }
        if y.iter().chain(x.iter()).any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite effect size or covariate"));
        }
        let f = x.ncols();
        let mut rows = Vec::with_capacity(m * f);
        for i in 0..m {
            rows.extend(x.row(i).iter());
        }
        Ok(MetaProblem { y, v, x, labels, groups, study_ids, rows })
    }

    pub fn intercept_only(y: Vec<f64>, v: Vec<f64>, groups: Vec<usize>) -> Result<Self> {
        let m = y.len();
        Self::new(y, v, DMatrix::from_element(m, 1, 1.0), vec![INTERCEPT.into()], groups)
    }

    /// Double-arcsine effect sizes of `dataset` against `design`.
    pub fn from_dataset(dataset: &Dataset, design: &DesignMatrix) -> Result<Self> {
        if design.nrows() != dataset.m() {
            return Err(Error::invalid("design rows do not match the dataset"));
        }
        let effects = effect_sizes(dataset);
        Self::with_studies(
            effects.iter().map(|e| e.theta).collect(),
            effects.iter().map(|e| e.variance).collect(),
            design.to_matrix(),
            design.labels(),
            dataset.group_sizes(),
            dataset.studies().iter().map(|s| s.study_id.clone()).collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn f(&self) -> usize {
        self.x.ncols()
    }

    pub fn h(&self) -> usize {
        self.groups.len()
    }

    /// Row-major copy of the design.
    pub(crate) fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        let f = self.f();
        &self.rows[i * f..(i + 1) * f]
    }

    /// Same data with a different design.
    pub fn with_design(&self, x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        Self::with_studies(
            self.y.clone(),
            self.v.clone(),
            x,
            labels,
            self.groups.clone(),
            self.study_ids.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    /// Evaluate at these variance components instead of estimating them.
    pub fixed: Option<VarianceComponents>,
    /// Likelihood evaluations allowed per optimizer start.
    pub max_evals: usize,
    /// Use Student-t (df = m - f) instead of normal quantiles for intervals.
    pub t_intervals: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { method: Method::Reml, fixed: None, max_evals: 2000, t_intervals: false }
    }
}

impl FitOptions {
    pub fn method(method: Method) -> Self {
        FitOptions { method, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub beta: DVector<f64>,
    pub cov_beta: DMatrix<f64>,
    pub varcomps: VarianceComponents,
    pub loglik: f64,
    pub method: Method,
    pub converged: bool,
    pub n_evaluations: usize,
    pub m: usize,
    pub h: usize,
    pub f: usize,
    pub t_intervals: bool,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn se(&self, i: usize) -> f64 {
        self.cov_beta[(i, i)].max(0.0).sqrt()
    }

    pub fn has_intercept(&self) -> bool {
        self.labels.first().map(String::as_str) == Some(INTERCEPT)
    }

    /// Two-sided p-value of the Wald test `β_i = 0`, on the same reference
    /// distribution as the intervals.
    pub fn p_value(&self, i: usize) -> f64 {
        let (b, se) = (self.beta[i], self.se(i));
        if se == 0.0 {
            return if b == 0.0 { 1.0 } else { 0.0 };
        }
        let z = (b / se).abs();
        if self.t_intervals && self.m > self.f {
            let t = StudentsT::new(0.0, 1.0, (self.m - self.f) as f64).expect("positive df");
            2.0 * t.sf(z)
        } else {
            2.0 * pnorm_upper(z)
        }
    }

    /// Two-sided critical value for a `level` interval.
    pub fn critical_value(&self, level: f64) -> f64 {
        if self.t_intervals && self.m > self.f {
            let t = StudentsT::new(0.0, 1.0, (self.m - self.f) as f64).expect("positive df");
            t.inverse_cdf(0.5 + level / 2.0)
        } else {
            z_two_sided(level)
        }
    }
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Weighted least squares under `W = diag(1/v)`: coefficients, residuals
/// and `(XᵀWX)⁻¹`.
pub(crate) fn weighted_least_squares(
    y: &[f64],
    x: &DMatrix<f64>,
    v: &[f64],
) -> Result<(DVector<f64>, Vec<f64>, DMatrix<f64>)> {
    let w = DVector::from_iterator(v.len(), v.iter().map(|s| 1.0 / s));
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    let info = x.transpose() * &xw;
    let chol = nalgebra::Cholesky::new(info)
        .ok_or_else(|| Error::Numerical("X'WX is not positive definite".into()))?;
    let beta = chol.solve(&(xw.transpose() * DVector::from_column_slice(y)));
    let fitted = x * &beta;
    let resid = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    Ok((beta, resid, chol.inverse()))
}

/// Method-of-moments estimate of the total heterogeneity variance from the
/// weighted residual statistic (DerSimonian–Laird, generalized to a design).
pub(crate) fn moment_heterogeneity(problem: &MetaProblem) -> f64 {
    let Ok((_, resid, inv_info)) = weighted_least_squares(&problem.y, &problem.x, &problem.v) else {
        return sample_variance(&problem.y);
    };
    let w: Vec<f64> = problem.v.iter().map(|s| 1.0 / s).collect();
    let q: f64 = resid.iter().zip(&w).map(|(r, wi)| wi * r * r).sum();
    let df = (problem.m() - problem.f()) as f64;
    let xw2x = DMatrix::from_fn(problem.f(), problem.f(), |a, b| {
        (0..problem.m()).map(|i| w[i] * w[i] * problem.x[(i, a)] * problem.x[(i, b)]).sum::<f64>()
    });
    let trace_p = w.iter().sum::<f64>() - (inv_info * xw2x).trace();
    if trace_p > 0.0 {
        (q - df) / trace_p
    } else {
        0.0
    }
}

/// Estimate the variance components by ML or REML, then the fixed effects
/// by GLS at the estimate.
///
/// The components are optimized as `exp(u)` with `u >= ln(VARIANCE_FLOOR)`,
/// from three starts `(0, s)`, `(s, 0)` and `(s/2, s/2)` where `s` is the
/// moment estimate of total heterogeneity, floored at a tenth of the mean
/// sampling variance. The best start wins. With a
/// single study σ²_ξ is unidentifiable and held at 0.
pub fn fit_model(problem: &MetaProblem, options: &FitOptions) -> Result<FitResult> {
    let (m, f) = (problem.m(), problem.f());
    if m <= f {
        return Err(Error::InsufficientData { required: f + 1, available: m });
    }
    let method = options.method;
    let mut warnings = Vec::new();

    let (varcomps, converged, n_evaluations) = if let Some(fixed) = options.fixed {
        fixed.validate()?;
        (fixed, true, 1)
    } else {
        let single_study = problem.h() < 2;
        if single_study {
            let msg = "only one study: between-study variance fixed at 0".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        // A truncated moment estimate would put every start on the floor,
        // where the log-scale surface is flat; keep the starts on the scale
        // of the sampling variances instead.
        let v_mean = problem.v.iter().sum::<f64>() / m as f64;
        let s_hat = moment_heterogeneity(problem).max(0.1 * v_mean);
        let settings = optimize::Settings {
            lower: VARIANCE_FLOOR.ln(),
            upper: 1e8f64.ln(),
            max_evals: options.max_evals,
            grad_tol: 1e-8,
            rel_tol: 1e-10,
            fd_step: 1e-5,
        };
        let to_vc = |u: &[f64]| {
            if single_study {
                VarianceComponents { sigma2_xi: 0.0, sigma2_zeta: u[0].exp() }
            } else {
                VarianceComponents { sigma2_xi: u[0].exp(), sigma2_zeta: u[1].exp() }
            }
        };
        let objective = |u: &[f64]| match likelihood::evaluate(problem, to_vc(u), method) {
            Ok(e) => -e.loglik,
            Err(_) => f64::INFINITY,
        };
        let starts: Vec<Vec<f64>> = if single_study {
            vec![vec![s_hat.ln()], vec![VARIANCE_FLOOR.ln()]]
        } else {
            [(VARIANCE_FLOOR, s_hat), (s_hat, VARIANCE_FLOOR), (s_hat / 2.0, s_hat / 2.0)]
                .iter()
                .map(|&(a, b)| vec![a.ln(), b.ln()])
                .collect()
        };

        let mut best: Option<optimize::Outcome> = None;
        let mut total_evals = 0;
        for start in &starts {
            let out = settings.minimize(objective, start);
            total_evals += out.evaluations;
            let better = match &best {
                None => true,
                Some(b) => out.value < b.value,
            };
            if better {
                best = Some(out);
            }
        }
        let mut best = best.expect("at least one start");
        // In log space the gradient vanishes as a component approaches 0, so
        // an optimum on the boundary is only approached slowly. Try each
        // component at the floor and restart from there if that is better.
        let d = best.x.len();
        for mask in 1..(1usize << d) {
            let mut corner = best.x.clone();
            for (i, u) in corner.iter_mut().enumerate() {
                if mask & (1 << i) != 0 {
                    *u = settings.lower;
                }
            }
            if objective(&corner) < best.value {
                let out = settings.minimize(objective, &corner);
                total_evals += out.evaluations;
                if out.value < best.value {
                    best = optimize::Outcome { converged: out.converged || best.converged, ..out };
                }
            }
        }
        if !best.value.is_finite() {
            return Err(Error::Numerical("likelihood is not finite at any start".into()));
        }
        if !best.converged {
            let msg = format!("optimizer did not converge after {total_evals} evaluations");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        (to_vc(&best.x), best.converged, total_evals)
    };

    let eval = likelihood::evaluate(problem, varcomps, method)?;
    Ok(FitResult {
        labels: problem.labels.clone(),
        cov_beta: eval.cov_beta(),
        beta: eval.beta,
        varcomps,
        loglik: eval.loglik,
        method,
        converged,
        n_evaluations,
        m,
        h: problem.h(),
        f,
        t_intervals: options.t_intervals,
        warnings,
    })
}

/// A linear combination of the fixed effects on the transformed scale,
/// with its interval and back-transformed proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub mu: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub proportion: f64,
    pub proportion_ci: (f64, f64),
}

/// Estimate `cᵀβ` at confidence `level`. Proportions use the double-arcsine
/// inverse with `n_equiv = 1/se²`.
pub fn linear_estimate(fit: &FitResult, contrast: &[f64], level: f64) -> Result<PooledEstimate> {
    if contrast.len() != fit.beta.len() {
        return Err(Error::invalid("contrast length does not match the coefficients"));
    }
    let c = DVector::from_column_slice(contrast);
    let mu = c.dot(&fit.beta);
    let se = (c.dot(&(&fit.cov_beta * &c))).max(0.0).sqrt();
    let half = fit.critical_value(level) * se;
    let n_equiv = if se > 0.0 { 1.0 / (se * se) } else { f64::INFINITY };
    let back = |t: f64| ft_inverse_clamped(t, n_equiv);
    Ok(PooledEstimate {
        mu,
        se,
        ci_low: mu - half,
        ci_high: mu + half,
        level,
        proportion: back(mu)?,
        proportion_ci: (back(mu - half)?, back(mu + half)?),
    })
}

/// The intercept (population effect μ) with a 95% interval.
pub fn pooled_estimate(fit: &FitResult) -> Result<PooledEstimate> {
    if !fit.has_intercept() {
        return Err(Error::invalid("pooled estimate needs an intercept model"));
    }
    let mut c = vec![0.0; fit.beta.len()];
    c[0] = 1.0;
    linear_estimate(fit, &c, 0.95)
}
