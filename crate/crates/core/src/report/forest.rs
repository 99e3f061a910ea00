use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{linear_estimate, predict_study_effects, FitResult, MetaProblem, StudySummary};
use crate::error::{Error, Result};
use crate::stats::z_two_sided;
use crate::transforms::ft_inverse_clamped;

const WIDTH: f64 = 800.0;
const ROW: f64 = 22.0;
const TOP: f64 = 10.0;
const PLOT_LEFT: f64 = 300.0;
const PLOT_RIGHT: f64 = 560.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisScale {
    /// Back-transformed proportions on `[0, 1]`.
    #[default]
    Proportion,
    /// Double-arcsine scale on `[0, π/2]`.
    Transformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestOptions {
    pub summary: StudySummary,
    pub scale: AxisScale,
    pub level: f64,
    pub title: Option<String>,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions { summary: StudySummary::Blup, scale: AxisScale::Proportion, level: 0.95, title: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestRow {
    pub study_id: String,
    pub trials: usize,
    pub estimate: f64,
    pub ci: (f64, f64),
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestPlot {
    pub svg: String,
    pub rows: Vec<ForestRow>,
    pub summary: ForestRow,
    pub scale: AxisScale,
}

/// Study weights `1ᵀV_j⁻¹1`, normalized to sum to one.
fn study_weights(fit: &FitResult, problem: &MetaProblem) -> Vec<f64> {
    let s2_xi = fit.varcomps.sigma2_xi;
    let mut start = 0;
    let raw: Vec<f64> = problem
        .groups
        .iter()
        .map(|&size| {
            let sw: f64 = problem.v[start..start + size].iter().map(|v| 1.0 / (fit.varcomps.sigma2_zeta + v)).sum();
            start += size;
            sw / (1.0 + s2_xi * sw)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Per-study predicted effects with intervals, plus the pooled estimate,
/// rendered as a fixed-geometry SVG (800 px wide, 22 px per row).
pub fn forest_plot(fit: &FitResult, problem: &MetaProblem, options: &ForestOptions) -> Result<ForestPlot> {
    if fit.m != problem.m() || fit.f != problem.f() || fit.beta.len() != problem.f() {
        return Err(Error::invalid("fit does not belong to this problem"));
    }
    if !fit.has_intercept() {
        return Err(Error::invalid("forest plot needs an intercept model"));
    }
    let z = z_two_sided(options.level);
    let hi = match options.scale {
        AxisScale::Proportion => 1.0,
        AxisScale::Transformed => FRAC_PI_2,
    };
    let display = |t: f64, se: f64| -> Result<f64> {
        match options.scale {
            AxisScale::Proportion => {
                let n_equiv = if se > 0.0 { 1.0 / (se * se) } else { f64::INFINITY };
                ft_inverse_clamped(t, n_equiv)
            }
            AxisScale::Transformed => Ok(t.clamp(0.0, FRAC_PI_2)),
        }
    };

    let weights = study_weights(fit, problem);
    let effects = predict_study_effects(fit, problem, options.summary);
    let rows: Vec<ForestRow> = effects
        .iter()
        .zip(&weights)
        .map(|(e, &weight)| {
            Ok(ForestRow {
                study_id: e.study_id.clone(),
                trials: e.trials,
                estimate: display(e.kappa_hat, e.se)?,
                ci: (display(e.kappa_hat - z * e.se, e.se)?, display(e.kappa_hat + z * e.se, e.se)?),
                weight,
            })
        })
        .collect::<Result<_>>()?;

    let means: Vec<f64> =
        (0..problem.f()).map(|c| problem.x.column(c).iter().sum::<f64>() / problem.m() as f64).collect();
    let pooled = linear_estimate(fit, &means, options.level)?;
    let summary = ForestRow {
        study_id: "Pooled".into(),
        trials: problem.m(),
        estimate: display(pooled.mu, pooled.se)?,
        ci: (display(pooled.ci_low, pooled.se)?, display(pooled.ci_high, pooled.se)?),
        weight: 1.0,
    };

    let svg = render(&rows, &summary, hi, options);
    Ok(ForestPlot { svg, rows, summary, scale: options.scale })
}

fn render(rows: &[ForestRow], summary: &ForestRow, hi: f64, options: &ForestOptions) -> String {
    let x_of = |v: f64| PLOT_LEFT + (v.clamp(0.0, hi) / hi) * (PLOT_RIGHT - PLOT_LEFT);
    let title_rows = usize::from(options.title.is_some());
    let y_of = |row: usize| TOP + ROW * (row + title_rows) as f64 + ROW / 2.0;
    let summary_row = rows.len() + 2;
    let axis_y = y_of(summary_row) + ROW;
    let height = axis_y + 2.0 * ROW;
    let max_weight = rows.iter().map(|r| r.weight).fold(0.0, f64::max);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH:.0}" height="{height:.0}" fill="white"/>"#);
    if let Some(title) = &options.title {
        let _ = writeln!(s, r#"<text x="10" y="{:.1}" font-weight="bold">{}</text>"#, y_of(0) - ROW + 4.0, escape(title));
    }
    let header_y = y_of(0) + 4.0;
    let (left_label, right_label) = match options.scale {
        AxisScale::Proportion => ("Proportion", "Estimate [CI]"),
        AxisScale::Transformed => ("Double arcsine", "Estimate [CI]"),
    };
    let _ = writeln!(s, r#"<g font-weight="bold">"#);
    let _ = writeln!(s, r#"<text x="10" y="{header_y:.1}">Study</text>"#);
    let _ = writeln!(s, r#"<text x="230" y="{header_y:.1}" text-anchor="end">Trials</text>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{header_y:.1}" text-anchor="middle">{left_label}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0
    );
    let _ = writeln!(s, r#"<text x="640" y="{header_y:.1}" text-anchor="end">Weight</text>"#);
    let _ = writeln!(s, r#"<text x="790" y="{header_y:.1}" text-anchor="end">{right_label}</text>"#);
    let _ = writeln!(s, "</g>");

    // Reference line at the pooled estimate.
    let _ = writeln!(
        s,
        r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4,3"/>"##,
        y_of(1) - ROW / 2.0,
        axis_y,
        x = x_of(summary.estimate)
    );

    for (i, row) in rows.iter().enumerate() {
        let y = y_of(i + 1);
        let side = 4.0 + 8.0 * (row.weight / max_weight.max(f64::MIN_POSITIVE)).sqrt();
        let _ = writeln!(s, r#"<g class="study">"#);
        let _ = writeln!(s, r#"<text x="10" y="{:.1}">{}</text>"#, y + 4.0, escape(&row.study_id));
        let _ = writeln!(s, r#"<text x="230" y="{:.1}" text-anchor="end">{}</text>"#, y + 4.0, row.trials);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
            x_of(row.ci.0),
            x_of(row.ci.1)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="black"/>"#,
            x_of(row.estimate) - side / 2.0,
            y - side / 2.0
        );
        let _ = writeln!(s, r#"<text x="640" y="{:.1}" text-anchor="end">{:.1}%</text>"#, y + 4.0, 100.0 * row.weight);
        let _ = writeln!(
            s,
            r#"<text x="790" y="{:.1}" text-anchor="end">{:.2} [{:.2}, {:.2}]</text>"#,
            y + 4.0,
            row.estimate,
            row.ci.0,
            row.ci.1
        );
        let _ = writeln!(s, "</g>");
    }

    let y = y_of(summary_row);
    let (l, c, r) = (x_of(summary.ci.0), x_of(summary.estimate), x_of(summary.ci.1));
    let _ = writeln!(s, r#"<g class="summary" font-weight="bold">"#);
    let _ = writeln!(s, r#"<text x="10" y="{:.1}">{}</text>"#, y + 4.0, escape(&summary.study_id));
    let _ = writeln!(s, r#"<text x="230" y="{:.1}" text-anchor="end">{}</text>"#, y + 4.0, summary.trials);
    let _ = writeln!(
        s,
        r#"<polygon points="{l:.2},{y:.2} {c:.2},{:.2} {r:.2},{y:.2} {c:.2},{:.2}" fill="black"/>"#,
        y - 7.0,
        y + 7.0
    );
    let _ = writeln!(s, r#"<text x="640" y="{:.1}" text-anchor="end">100.0%</text>"#, y + 4.0);
    let _ = writeln!(
        s,
        r#"<text x="790" y="{:.1}" text-anchor="end">{:.2} [{:.2}, {:.2}]</text>"#,
        y + 4.0,
        summary.estimate,
        summary.ci.0,
        summary.ci.1
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r#"<line x1="{PLOT_LEFT:.2}" y1="{axis_y:.2}" x2="{PLOT_RIGHT:.2}" y2="{axis_y:.2}" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = hi * k as f64 / 4.0;
        let x = x_of(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{axis_y:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, axis_y + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.2}</text>"#, axis_y + 18.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit_model, FitOptions, VarianceComponents};

    fn problem() -> MetaProblem {
        MetaProblem::with_studies(
            vec![1.0, 1.1, 1.2, 0.9, 1.05, 1.3],
            vec![0.002, 0.003, 0.002, 0.004, 0.002, 0.003],
            nalgebra::DMatrix::from_element(6, 1, 1.0),
            vec!["intercept".into()],
            vec![2, 3, 1],
            vec!["A & B".into(), "C".into(), "D".into()],
        )
        .unwrap()
    }

    #[test]
    fn rows_weights_and_intervals() {
        let p = problem();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let plot = forest_plot(&fit, &p, &ForestOptions::default()).unwrap();
        assert_eq!(plot.rows.len(), 3);
        let total: f64 = plot.rows.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for r in plot.rows.iter().chain([&plot.summary]) {
            assert!(r.ci.0 <= r.estimate && r.estimate <= r.ci.1);
            assert!((0.0..=1.0).contains(&r.ci.0) && r.ci.1 <= 1.0);
        }
        assert!(plot.svg.contains("A &amp; B"));
        assert_eq!(plot.svg.matches("<g class=\"study\">").count(), 3);
        assert_eq!(plot.svg.matches("<polygon").count(), 1);
    }

    #[test]
    fn no_between_variance_puts_every_marker_at_the_pool() {
        let p = problem();
        let opts = FitOptions { fixed: Some(VarianceComponents::new(0.0, 0.01).unwrap()), ..Default::default() };
        let fit = fit_model(&p, &opts).unwrap();
        let plot = forest_plot(&fit, &p, &ForestOptions { scale: AxisScale::Transformed, ..Default::default() }).unwrap();
        for r in &plot.rows {
            assert!((r.estimate - plot.summary.estimate).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_fit_is_rejected() {
        let p = problem();
        let other = MetaProblem::intercept_only(vec![1.0, 1.1], vec![0.01, 0.01], vec![2]).unwrap();
        let fit = fit_model(&other, &FitOptions::default()).unwrap();
        assert!(forest_plot(&fit, &p, &ForestOptions::default()).is_err());
    }
}
