//! Log-likelihood of the three-level model, evaluated block by block.
//!
//! Each study block is `D + σ²_ξ·11ᵀ` with `D` diagonal, so its inverse and
//! determinant follow from the Sherman–Morrison identity without forming
//! any `m × m` matrix.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Method, MetaProblem, VarianceComponents};
use crate::error::{Error, Result};

/// Everything the likelihood computes along the way.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

impl Evaluation {
    pub fn cov_beta(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub(crate) fn evaluate(problem: &MetaProblem, vc: VarianceComponents, method: Method) -> Result<Evaluation> {
    let f = problem.f();
    let m = problem.m();
    let rows = problem.rows();
    let y = &problem.y;
    let v = &problem.v;

    let mut xtvx = DMatrix::<f64>::zeros(f, f);
    let mut xtvy = DVector::<f64>::zeros(f);
    let mut logdet_v = 0.0;
    let mut shrink = Vec::with_capacity(problem.groups.len());
    let mut a = vec![0.0; f];
    let mut start = 0;
    for &size in &problem.groups {
        a.iter_mut().for_each(|x| *x = 0.0);
        let mut s = 0.0;
        let mut ay = 0.0;
        for i in start..start + size {
            let d = vc.sigma2_zeta + v[i];
            let w = 1.0 / d;
            logdet_v += d.ln();
            s += w;
            ay += w * y[i];
            let xi = &rows[i * f..(i + 1) * f];
            for c in 0..f {
                let wx = w * xi[c];
                a[c] += wx;
                xtvy[c] += wx * y[i];
                for r in c..f {
                    xtvx[(r, c)] += wx * xi[r];
                }
            }
        }
        let scale = 1.0 + vc.sigma2_xi * s;
        logdet_v += scale.ln();
        let c_j = vc.sigma2_xi / scale;
        if c_j != 0.0 {
            for c in 0..f {
                xtvy[c] -= c_j * a[c] * ay;
                for r in c..f {
                    xtvx[(r, c)] -= c_j * a[r] * a[c];
                }
            }
        }
        shrink.push(c_j);
        start += size;
    }
    for c in 0..f {
        for r in c + 1..f {
            xtvx[(c, r)] = xtvx[(r, c)];
        }
    }

    let chol = Cholesky::new(xtvx).ok_or_else(|| {
        Error::Numerical("X'V^-1 X is not positive definite (rank-deficient design?)".into())
    })?;
    let beta = chol.solve(&xtvy);

    // Quadratic form on explicit residuals, r' V^-1 r.
    let mut quad = 0.0;
    let mut start = 0;
    for (&size, &c_j) in problem.groups.iter().zip(&shrink) {
        let mut wr_sum = 0.0;
        for i in start..start + size {
            let xi = &rows[i * f..(i + 1) * f];
            let fitted: f64 = xi.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let r = y[i] - fitted;
            let w = 1.0 / (vc.sigma2_zeta + v[i]);
            quad += w * r * r;
            wr_sum += w * r;
        }
        quad -= c_j * wr_sum * wr_sum;
        start += size;
    }

    let loglik = match method {
        Method::Ml => -0.5 * (m as f64 * (2.0 * PI).ln() + logdet_v + quad),
        Method::Reml => {
            let logdet_info: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            -0.5 * ((m - f) as f64 * (2.0 * PI).ln() + logdet_v + logdet_info + quad)
        }
    };
    Ok(Evaluation { loglik, beta, chol })
}

/// ML or REML log-likelihood at fixed variance components, with the fixed
/// effects profiled out by GLS.
pub fn log_likelihood(problem: &MetaProblem, varcomps: VarianceComponents, method: Method) -> Result<f64> {
    varcomps.validate()?;
    if method == Method::Reml && problem.m() <= problem.f() {
        return Err(Error::InsufficientData { required: problem.f() + 1, available: problem.m() });
    }
    evaluate(problem, varcomps, method).map(|e| e.loglik)
}
