//! Text and SVG output: forest plots, regression tables, model comparison
//! tables and transform diagnostics. Nothing here touches the filesystem.

mod forest;
mod tables;

use serde::{Deserialize, Serialize};

pub use forest::{forest_plot, AxisScale, ForestOptions, ForestPlot, ForestRow};
pub use tables::{
    comparison_table, diagnostic_table, regression_table, RegressionRow, RegressionTable, RowKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

/// `<.0001` below 1e-4, otherwise four decimals.
pub fn format_p(p: f64) -> String {
    if p.is_nan() {
        String::new()
    } else if p < 1e-4 {
        "<.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Six significant digits, in a form every CSV reader parses as a number.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.00005), "<.0001");
        assert_eq!(format_p(0.0001), "0.0001");
        assert_eq!(format_p(1.0), "1.0000");
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0201234567), "0.0201235");
        assert_eq!(sig6(-326.4712), "-326.471");
        assert_eq!(sig6(518042.4), "518042");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        for x in [1.0, 123456.0, 9.99999e-5, -0.5, 2.5] {
            let back: f64 = sig6(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 5e-6, "{x}");
        }
    }
}
