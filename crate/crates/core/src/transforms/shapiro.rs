//! Shapiro–Wilk W test using Royston's polynomial approximations
//! (Applied Statistics algorithm AS R94), valid for 3 <= n <= 5000.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{pnorm_upper, qnorm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Half-vector of positive weights for the upper order statistics,
/// `a[0]` pairing the extremes.
fn weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an = n as f64;
    let m: Vec<f64> = (1..=half).map(|i| -qnorm((i as f64 - 0.375) / (an + 0.25))).collect();
    let summ2 = 2.0 * m.iter().map(|x| x * x).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) + m[0] / ssumm2;

    let mut a = vec![0.0; half];
    let (first_free, fac) = if n > 5 {
        let a2 = m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
    };
    a[0] = a1;
    for i in first_free..half {
        a[i] = m[i] / fac;
    }
    a
}

pub fn shapiro_wilk(values: &[f64]) -> Result<ShapiroWilk> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InsufficientData { required: 3, available: n });
    }
    if n > 5000 {
        return Err(Error::invalid(format!("Shapiro-Wilk supports at most 5000 values, got {n}")));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite value in Shapiro-Wilk input"));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(Error::invalid("Shapiro-Wilk input has zero variance"));
    }

    let a = weights(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut numerator = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        numerator += ai * ((x[n - 1 - i] - mean) / range - (x[i] - mean) / range);
    }
    let ssx: f64 = x.iter().map(|xi| ((xi - mean) / range).powi(2)).sum();
    let ssa = 2.0 * a.iter().map(|ai| ai * ai).sum::<f64>();
    let w = (numerator * numerator / (ssa * ssx)).min(1.0);
    let w1 = 1.0 - w;

    if n == 3 {
        // Exact null distribution for three observations.
        const SIX_OVER_PI: f64 = 6.0 / std::f64::consts::PI;
        const PI_OVER_3: f64 = std::f64::consts::PI / 3.0;
        let p = (SIX_OVER_PI * (w.sqrt().asin() - PI_OVER_3)).clamp(0.0, 1.0);
        return Ok(ShapiroWilk { w, p_value: p });
    }
    if w1 <= 0.0 {
        return Ok(ShapiroWilk { w, p_value: 1.0 });
    }

    let an = n as f64;
    let mut y = w1.ln();
    let (mean_z, sd_z) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok(ShapiroWilk { w, p_value: 1e-99 });
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let ln_n = an.ln();
        (poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    let p = pnorm_upper((y - mean_z) / sd_z);
    Ok(ShapiroWilk { w, p_value: p.clamp(0.0, 1.0) })
}
