use std::fmt::Write as _;

use serde::Serialize;

use super::{format_p, sig6, TableFormat};
use crate::engine::FitResult;
use crate::error::{Error, Result};
use crate::ingest::{DesignMatrix, FeatureKind, FeatureSchema, INTERCEPT};
use crate::selection::{sort_by_aic, ModelComparisonRow};
use crate::transforms::DiagnosticRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Coefficient,
    /// Heading of a categorical feature, naming its reference level.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub kind: RowKind,
    pub label: String,
    pub feature: Option<String>,
    pub level: Option<String>,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub p_value: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionTable {
    pub rows: Vec<RegressionRow>,
    /// Columns removed for collinearity.
    pub dropped: Vec<String>,
    pub level: f64,
}

/// Coefficients of a fitted model with Wald p-values and intervals.
/// Categorical features get a heading row naming their reference level.
pub fn regression_table(fit: &FitResult, design: &DesignMatrix, schema: &FeatureSchema) -> Result<RegressionTable> {
    let labels = design.labels();
    if labels != fit.labels {
        return Err(Error::invalid("fit and design have different columns"));
    }
    let level = 0.95;
    let crit = fit.critical_value(level);
    let coefficient = |idx: usize, label: String, feature: Option<String>, level_name: Option<String>| {
        let (b, se) = (fit.beta[idx], fit.se(idx));
        RegressionRow {
            kind: RowKind::Coefficient,
            label,
            feature,
            level: level_name,
            beta: Some(b),
            se: Some(se),
            p_value: Some(fit.p_value(idx)),
            ci: Some((b - crit * se, b + crit * se)),
        }
    };
    let index = |label: &str| labels.iter().position(|l| l == label);

    let mut rows = Vec::new();
    if let Some(i) = index(INTERCEPT) {
        rows.push(coefficient(i, "Intercept".into(), None, None));
    }
    for (feature, group) in &design.feature_groups {
        let spec = schema.get(feature).ok_or_else(|| Error::UnknownFeature(feature.clone()))?;
        match spec.kind {
            FeatureKind::Numeric => {
                if let Some(i) = index(feature) {
                    let label =
                        if spec.scale == 1.0 { feature.clone() } else { format!("{feature} (/{})", spec.scale) };
                    rows.push(coefficient(i, label, Some(feature.clone()), None));
                }
            }
            FeatureKind::Categorical => {
                let reference = spec.reference_level.clone().unwrap_or_default();
                rows.push(RegressionRow {
                    kind: RowKind::Reference,
                    label: format!("{feature} (Ref: {reference})"),
                    feature: Some(feature.clone()),
                    level: Some(reference),
                    beta: None,
                    se: None,
                    p_value: None,
                    ci: None,
                });
                for col in group {
                    if let Some(i) = index(col) {
                        let lvl = design.columns[i].level.clone().unwrap_or_default();
                        rows.push(coefficient(i, lvl.clone(), Some(feature.clone()), Some(lvl)));
                    }
                }
            }
        }
    }
    Ok(RegressionTable { rows, dropped: design.dropped.clone(), level })
}

impl RegressionTable {
    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Markdown => self.markdown(),
            TableFormat::Csv => self.csv(),
        }
    }

    fn markdown(&self) -> String {
        let mut s = format!("| | β | SE | p | {:.0}% CI |\n|---|---:|---:|---:|---:|\n", 100.0 * self.level);
        for row in &self.rows {
            match row.kind {
                RowKind::Reference => {
                    let feature = row.feature.as_deref().unwrap_or_default();
                    let reference = row.level.as_deref().unwrap_or_default();
                    let _ = writeln!(s, "| **{feature}** (Ref: {reference}) | | | | |");
                }
                RowKind::Coefficient => {
                    let (lo, hi) = row.ci.unwrap_or((f64::NAN, f64::NAN));
                    let _ = writeln!(
                        s,
                        "| {} | {:.4} | {:.4} | {} | [{:.4}; {:.4}] |",
                        row.label,
                        row.beta.unwrap_or(f64::NAN),
                        row.se.unwrap_or(f64::NAN),
                        format_p(row.p_value.unwrap_or(f64::NAN)),
                        lo,
                        hi
                    );
                }
            }
        }
        if !self.dropped.is_empty() {
            let _ = writeln!(s, "\nDropped as redundant (collinear with earlier columns): {}", self.dropped.join(", "));
        }
        s
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["term", "feature", "level", "beta", "se", "p", "ci_low", "ci_high", "note"])
            .expect("in-memory write");
        let opt = |x: Option<f64>| x.map(sig6).unwrap_or_default();
        for row in &self.rows {
            let (lo, hi) = match row.ci {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            let note = if row.kind == RowKind::Reference { "reference" } else { "" };
            w.write_record([
                row.label.as_str(),
                row.feature.as_deref().unwrap_or_default(),
                row.level.as_deref().unwrap_or_default(),
                &opt(row.beta),
                &opt(row.se),
                &opt(row.p_value),
                &opt(lo),
                &opt(hi),
                note,
            ])
            .expect("in-memory write");
        }
        for label in &self.dropped {
            let (feature, level) = label.split_once('=').unwrap_or((label.as_str(), ""));
            w.write_record([label.as_str(), feature, level, "", "", "", "", "", "dropped"]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn two(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_default()
}

/// Model comparison in AIC order (stable on ties). R² cells of the null
/// model are blank.
pub fn comparison_table(rows: &[ModelComparisonRow], format: TableFormat) -> String {
    let mut rows = rows.to_vec();
    sort_by_aic(&mut rows);
    match format {
        TableFormat::Markdown => {
            let mut s = String::from(
                "| Model | f | AIC | BIC | RMSE | Q | σ²_ξ (I²_ξ) | σ²_ζ (I²_ζ) | μ̂ [95% CI] | R²_ξ | R²_ζ |\n\
                 |---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n",
            );
            for r in &rows {
                if let Some(err) = &r.error {
                    let _ = writeln!(s, "| {} | | | | | | | | | | | (failed: {err})", r.name);
                    continue;
                }
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2} | {:.2} | {:.4} | {:.2} | {:.4} ({:.2}) | {:.4} ({:.2}) | {:.2} [{:.2}; {:.2}] | {} | {} |",
                    r.name,
                    r.f,
                    r.aic,
                    r.bic,
                    r.rmse,
                    r.q,
                    r.sigma2_xi,
                    r.i2_xi,
                    r.sigma2_zeta,
                    r.i2_zeta,
                    r.mu_hat,
                    r.mu_ci.0,
                    r.mu_ci.1,
                    two(r.r2_xi),
                    two(r.r2_zeta)
                );
            }
            s
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "model",
                "f",
                "aic",
                "bic",
                "rmse",
                "q",
                "sigma2_xi",
                "i2_xi",
                "sigma2_zeta",
                "i2_zeta",
                "mu_hat",
                "mu_ci_low",
                "mu_ci_high",
                "r2_xi",
                "r2_zeta",
                "features",
            ])
            .expect("in-memory write");
            for r in &rows {
                let opt = |x: Option<f64>| x.map(sig6).unwrap_or_default();
                w.write_record([
                    r.name.clone(),
                    r.f.to_string(),
                    sig6(r.aic),
                    sig6(r.bic),
                    sig6(r.rmse),
                    sig6(r.q),
                    sig6(r.sigma2_xi),
                    sig6(r.i2_xi),
                    sig6(r.sigma2_zeta),
                    sig6(r.i2_zeta),
                    sig6(r.mu_hat),
                    sig6(r.mu_ci.0),
                    sig6(r.mu_ci.1),
                    opt(r.r2_xi),
                    opt(r.r2_zeta),
                    r.features.join(";"),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    }
}

/// Shapiro–Wilk results per transform.
pub fn diagnostic_table(rows: &[DiagnosticRow], format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => {
            let mut s = String::from("| Transform | W | p |\n|---|---:|---:|\n");
            for r in rows {
                match (&r.result, &r.skipped) {
                    (Some(sw), _) => {
                        let _ = writeln!(s, "| {} | {:.4} | {} |", r.kind.name(), sw.w, format_p(sw.p_value));
                    }
                    (None, reason) => {
                        let _ = writeln!(s, "| {} | skipped | {} |", r.kind.name(), reason.as_deref().unwrap_or(""));
                    }
                }
            }
            s
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["transform", "w", "p", "skipped"]).expect("in-memory write");
            for r in rows {
                let (wv, p) = r.result.map(|sw| (sig6(sw.w), sig6(sw.p_value))).unwrap_or_default();
                w.write_record([r.kind.name(), &wv, &p, r.skipped.as_deref().unwrap_or("")]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit_model, FitOptions, MetaProblem};
    use crate::ingest::{encode_design, parse_dataset, FeatureSpec};

    fn data() -> crate::ingest::Dataset {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::numeric("size", 1000.0),
            FeatureSpec::categorical("model", "classic"),
            FeatureSpec::categorical("dup", "classic"),
        ])
        .unwrap();
        let csv = "study_id,trial_id,k,n,size,model,dup\n\
                   A,1,80,100,1000,classic,classic\nA,2,85,100,2000,deep,deep\n\
                   B,1,70,100,1500,classic,classic\nB,2,90,100,3000,deep,deep\n\
                   C,1,75,100,1200,classic,classic\nC,2,88,100,2500,deep,deep\n";
        parse_dataset(csv, &schema).unwrap()
    }

    #[test]
    fn regression_rows_and_footnote() {
        let d = data();
        let design = encode_design(&d, &["size", "model", "dup"]).unwrap();
        let p = MetaProblem::from_dataset(&d, &design).unwrap();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let table = regression_table(&fit, &design, d.schema()).unwrap();
        let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            ["Intercept", "size (/1000)", "model (Ref: classic)", "deep", "dup (Ref: classic)"]
        );
        let md = table.render(TableFormat::Markdown);
        assert!(md.contains("**model** (Ref: classic)"));
        assert!(md.contains("Dropped as redundant"));
        assert!(md.contains("dup=deep"));
        let csv = table.render(TableFormat::Csv);
        assert!(csv.lines().last().unwrap().ends_with("dropped"));
    }

    #[test]
    fn intercept_only_table_has_one_row() {
        let d = data();
        let design = encode_design::<&str>(&d, &[]).unwrap();
        let p = MetaProblem::from_dataset(&d, &design).unwrap();
        let fit = fit_model(&p, &FitOptions::default()).unwrap();
        let table = regression_table(&fit, &design, d.schema()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.dropped.is_empty());
    }

    #[test]
    fn zero_coefficient_has_unit_p() {
        let d = data();
        let design = encode_design::<&str>(&d, &[]).unwrap();
        let p = MetaProblem::from_dataset(&d, &design).unwrap();
        let mut fit = fit_model(&p, &FitOptions::default()).unwrap();
        fit.beta[0] = 0.0;
        let table = regression_table(&fit, &design, d.schema()).unwrap();
        assert_eq!(table.rows[0].p_value, Some(1.0));
    }
}
