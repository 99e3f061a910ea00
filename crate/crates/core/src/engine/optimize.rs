//! Box-constrained quasi-Newton minimization with finite-difference
//! gradients. Tailored to the two log-variance parameters of the engine but
//! written for any small dimension.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct Settings {
    pub lower: f64,
    pub upper: f64,
    pub max_evals: usize,
    /// Projected-gradient norm tolerance, relative to `max(1, |f|)`.
    pub grad_tol: f64,
    /// Relative change in `f` below which a step counts as stalled.
    pub rel_tol: f64,
    pub fd_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

impl Settings {
    fn project(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|xi| *xi = xi.clamp(self.lower, self.upper));
    }

    fn gradient<F: FnMut(&[f64]) -> f64>(&self, f: &mut Counted<F>, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + self.fd_step;
            let hi = f.call(&probe);
            probe[i] = x[i] - self.fd_step;
            let lo = f.call(&probe);
            probe[i] = x[i];
            g[i] = (hi - lo) / (2.0 * self.fd_step);
        }
        g
    }

    /// Zero the gradient components that push against an active bound.
    fn projected(&self, x: &[f64], g: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(g.iter()).map(|(&xi, &gi)| {
                if (xi <= self.lower && gi > 0.0) || (xi >= self.upper && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            }),
        )
    }

    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, f: F, start: &[f64]) -> Outcome {
        let d = start.len();
        let mut obj = Counted { f, evals: 0 };
        let mut x = start.to_vec();
        self.project(&mut x);
        let mut fx = obj.call(&x);
        if d == 0 {
            return Outcome { x, value: fx, converged: true, evaluations: obj.evals };
        }
        let mut g = self.gradient(&mut obj, &x);
        let mut h = DMatrix::<f64>::identity(d, d);
        let mut converged = false;

        while obj.evals < self.max_evals {
            let pg = self.projected(&x, &g);
            let scale = fx.abs().max(1.0);
            if pg.norm() <= self.grad_tol * scale {
                converged = true;
                break;
            }
            let free: Vec<bool> = (0..d).map(|i| pg[i] != 0.0 || g[i] == 0.0).collect();
            let mut dir = -(&h * &pg);
            for i in 0..d {
                if !free[i] {
                    dir[i] = 0.0;
                }
            }
            if dir.dot(&pg) >= 0.0 {
                h = DMatrix::identity(d, d);
                dir = -pg.clone();
            }

            // Backtracking Armijo search along the projected path.
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + alpha * di).collect();
                self.project(&mut trial);
                let step = DVector::from_iterator(d, trial.iter().zip(&x).map(|(a, b)| a - b));
                if step.norm() == 0.0 {
                    break;
                }
                let ft = obj.call(&trial);
                if ft <= fx + 1e-4 * g.dot(&step) {
                    accepted = Some((trial, ft, step));
                    break;
                }
                alpha *= 0.5;
                if obj.evals >= self.max_evals {
                    break;
                }
            }
            let Some((next, f_next, step)) = accepted else {
                // No descent possible: we are at the noise floor of the
                // finite-difference gradient.
                if h != DMatrix::identity(d, d) {
                    h = DMatrix::identity(d, d);
                    continue;
                }
                converged = pg.norm() <= 1e3 * self.grad_tol * scale;
                break;
            };

            let g_next = self.gradient(&mut obj, &next);
            let change = (fx - f_next).abs() / fx.abs().max(1.0);
            let yv = &g_next - &g;
            let sy = step.dot(&yv);
            if sy > 1e-12 * step.norm() * yv.norm() {
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(d, d);
                let left = &eye - rho * &step * yv.transpose();
                let right = &eye - rho * &yv * step.transpose();
                h = &left * &h * &right + rho * &step * step.transpose();
            }
            x = next;
            fx = f_next;
            g = g_next;
            if change < self.rel_tol {
                let pg = self.projected(&x, &g);
                if pg.norm() <= 1e3 * self.grad_tol * fx.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        }
        Outcome { x, value: fx, converged, evaluations: obj.evals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Settings {
        Settings { lower: -30.0, upper: 30.0, max_evals: 2000, grad_tol: 1e-8, rel_tol: 1e-10, fd_step: 1e-5 }
    }

    #[test]
    fn quadratic_bowl() {
        let out = settings().minimize(|x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2), &[5.0, 5.0]);
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let out = settings().minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
        );
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn stops_at_active_bound() {
        let s = Settings { lower: 0.0, ..settings() };
        let out = s.minimize(|x| (x[0] + 3.0).powi(2) + (x[1] - 1.0).powi(2), &[2.0, 2.0]);
        assert!(out.converged);
        assert_eq!(out.x[0], 0.0);
        assert!((out.x[1] - 1.0).abs() < 1e-6);
    }
}
