use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Lower-tail standard normal quantile.
pub(crate) fn qnorm(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Upper-tail standard normal probability, accurate far into the tail.
pub(crate) fn pnorm_upper(x: f64) -> f64 {
    std_normal().sf(x)
}

pub(crate) fn chisq_upper(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive df").sf(x)
}

/// Two-sided quantile `z` with `P(|Z| <= z) = level`.
pub(crate) fn z_two_sided(level: f64) -> f64 {
    qnorm(0.5 + level / 2.0)
}

pub(crate) fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
