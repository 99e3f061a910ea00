use serde::{Deserialize, Serialize};

use super::{FitResult, MetaProblem};
use crate::error::{Error, Result};

/// Predicted study-level effect `κ_j` on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyEffect {
    pub study_id: String,
    pub kappa_hat: f64,
    pub se: f64,
    pub trials: usize,
}

/// How a study's summary effect is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudySummary {
    /// Empirical BLUP `x̄_jᵀβ̂ + ξ̂_j` under the fitted variance components.
    #[default]
    Blup,
    /// Fixed-effect inverse-variance pool of the study's own trials.
    Pooled,
}

fn study_range(problem: &MetaProblem, j: usize) -> std::ops::Range<usize> {
    let start: usize = problem.groups[..j].iter().sum();
    start..start + problem.groups[j]
}

fn blup(fit: &FitResult, problem: &MetaProblem, j: usize) -> StudyEffect {
    let range = study_range(problem, j);
    let f = problem.f();
    let s2_xi = fit.varcomps.sigma2_xi;
    let beta = fit.beta.as_slice();

    // V_j^-1 1 = w - c w (1'w), with w_i = 1/(σ²_ζ + v_i).
    let w: Vec<f64> = range.clone().map(|i| 1.0 / (fit.varcomps.sigma2_zeta + problem.v[i])).collect();
    let sw: f64 = w.iter().sum();
    let c = s2_xi / (1.0 + s2_xi * sw);
    let vinv_one: Vec<f64> = w.iter().map(|wi| wi - c * wi * sw).collect();
    let one_vinv_one: f64 = vinv_one.iter().sum();

    let mut profile = vec![0.0; f];
    let mut xi_hat = 0.0;
    // Loadings of β̂ in κ̂: a = x̄_j - σ²_ξ X_jᵀ V_j⁻¹ 1.
    let mut loading = vec![0.0; f];
    for (local, i) in range.clone().enumerate() {
        let row = problem.row(i);
        let fitted: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        xi_hat += s2_xi * vinv_one[local] * (problem.y[i] - fitted);
        for col in 0..f {
            profile[col] += row[col] / range.len() as f64;
            loading[col] -= s2_xi * vinv_one[local] * row[col];
        }
    }
    for col in 0..f {
        loading[col] += profile[col];
    }
    let mean: f64 = profile.iter().zip(beta).map(|(x, b)| x * b).sum();
    let mut beta_part = 0.0;
    for r in 0..f {
        for col in 0..f {
            beta_part += loading[r] * fit.cov_beta[(r, col)] * loading[col];
        }
    }
    let pev = (s2_xi * (1.0 - s2_xi * one_vinv_one)).max(0.0) + beta_part.max(0.0);
    StudyEffect {
        study_id: problem.study_ids[j].clone(),
        kappa_hat: mean + xi_hat,
        se: pev.sqrt(),
        trials: range.len(),
    }
}

fn pooled(problem: &MetaProblem, j: usize) -> StudyEffect {
    let range = study_range(problem, j);
    let sw: f64 = range.clone().map(|i| 1.0 / problem.v[i]).sum();
    let mean = range.clone().map(|i| problem.y[i] / problem.v[i]).sum::<f64>() / sw;
    StudyEffect { study_id: problem.study_ids[j].clone(), kappa_hat: mean, se: (1.0 / sw).sqrt(), trials: range.len() }
}

/// One predicted effect per study, in study order.
///
/// The BLUP's standard error is the root prediction-error variance, which
/// includes the uncertainty of β̂.
pub fn predict_study_effects(fit: &FitResult, problem: &MetaProblem, summary: StudySummary) -> Vec<StudyEffect> {
    (0..problem.h())
        .map(|j| match summary {
            StudySummary::Blup => blup(fit, problem, j),
            StudySummary::Pooled => pooled(problem, j),
        })
        .collect()
}

pub fn predict_study_effect(
    fit: &FitResult,
    problem: &MetaProblem,
    study_id: &str,
    summary: StudySummary,
) -> Result<StudyEffect> {
    let j = problem
        .study_ids
        .iter()
        .position(|s| s == study_id)
        .ok_or_else(|| Error::UnknownStudy(study_id.to_string()))?;
    Ok(match summary {
        StudySummary::Blup => blup(fit, problem, j),
        StudySummary::Pooled => pooled(problem, j),
    })
}

/// Residuals `y - Xβ̂` from the fixed effects alone.
pub fn fixed_effect_residuals(fit: &FitResult, problem: &MetaProblem) -> Vec<f64> {
    let beta = fit.beta.as_slice();
    (0..problem.m())
        .map(|i| problem.y[i] - problem.row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
        .collect()
}

/// Residuals `y - Xβ̂ - ξ̂_j`, net of each study's predicted deviation.
pub fn conditional_residuals(fit: &FitResult, problem: &MetaProblem) -> Vec<f64> {
    let mut resid = fixed_effect_residuals(fit, problem);
    let s2_xi = fit.varcomps.sigma2_xi;
    for j in 0..problem.h() {
        let range = study_range(problem, j);
        let w: Vec<f64> = range.clone().map(|i| 1.0 / (fit.varcomps.sigma2_zeta + problem.v[i])).collect();
        let sw: f64 = w.iter().sum();
        let c = s2_xi / (1.0 + s2_xi * sw);
        let xi_hat: f64 = range
            .clone()
            .zip(&w)
            .map(|(i, wi)| s2_xi * (wi - c * wi * sw) * resid[i])
            .sum();
        for i in range {
            resid[i] -= xi_hat;
        }
    }
    resid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit_model, FitOptions, VarianceComponents};
    use approx::assert_abs_diff_eq;

    fn toy() -> MetaProblem {
        MetaProblem::intercept_only(vec![0.9, 1.0, 1.2, 1.3, 1.25], vec![0.01, 0.02, 0.01, 0.015, 0.02], vec![2, 3])
            .unwrap()
    }

    #[test]
    fn no_between_variance_means_no_deviation() {
        let p = toy();
        let opts = FitOptions { fixed: Some(VarianceComponents::new(0.0, 0.01).unwrap()), ..Default::default() };
        let fit = fit_model(&p, &opts).unwrap();
        for e in predict_study_effects(&fit, &p, StudySummary::Blup) {
            assert_abs_diff_eq!(e.kappa_hat, fit.beta[0], epsilon = 1e-14);
            assert_abs_diff_eq!(e.se, fit.se(0), epsilon = 1e-14);
        }
    }

    #[test]
    fn shrinkage_is_monotone_in_between_variance() {
        let p = MetaProblem::intercept_only(vec![0.6, 0.8, 0.7], vec![0.01; 3], vec![3]).unwrap();
        let mut last_gap = 0.0;
        for s2 in [0.0, 0.001, 0.01, 0.1, 1.0] {
            let opts = FitOptions { fixed: Some(VarianceComponents::new(s2, 0.005).unwrap()), ..Default::default() };
            let fit = fit_model(&p, &opts).unwrap();
            let e = &predict_study_effects(&fit, &p, StudySummary::Blup)[0];
            let gap = (e.kappa_hat - fit.beta[0]).abs();
            assert!(gap >= last_gap);
            last_gap = gap;
        }
    }

    #[test]
    fn unknown_study_is_an_error() {
        let p = toy();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        assert!(predict_study_effect(&fit, &p, "S2", StudySummary::Blup).is_ok());
        assert!(matches!(
            predict_study_effect(&fit, &p, "nope", StudySummary::Blup),
            Err(Error::UnknownStudy(_))
        ));
    }

    #[test]
    fn conditional_residuals_match_blup() {
        let p = toy();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let effects = predict_study_effects(&fit, &p, StudySummary::Blup);
        let cond = conditional_residuals(&fit, &p);
        for (i, r) in cond.iter().enumerate() {
            let j = usize::from(i >= 2);
            assert_abs_diff_eq!(*r, p.y[i] - effects[j].kappa_hat, epsilon = 1e-12);
        }
    }

    #[test]
    fn within_study_pool() {
        let p = toy();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let e = predict_study_effect(&fit, &p, "S1", StudySummary::Pooled).unwrap();
        let expected = (0.9 / 0.01 + 1.0 / 0.02) / (1.0 / 0.01 + 1.0 / 0.02);
        assert_abs_diff_eq!(e.kappa_hat, expected, epsilon = 1e-14);
        assert_eq!(e.trials, 2);
    }
}
