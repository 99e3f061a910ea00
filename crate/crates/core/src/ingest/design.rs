use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use super::dataset::{Dataset, FeatureValue};
use super::schema::FeatureKind;
use crate::error::{Error, Result};

/// Residual-norm ratio below which a column counts as collinear with the
/// columns retained before it.
pub const COLLINEARITY_TOL: f64 = 1e-10;

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignColumn {
    pub label: String,
    /// Source feature; `None` for the intercept.
    pub feature: Option<String>,
    /// Category for dummy columns.
    pub level: Option<String>,
    pub values: Vec<f64>,
}

/// Intercept plus treatment-coded moderators, with collinear columns removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignMatrix {
    pub columns: Vec<DesignColumn>,
    pub intercept_included: bool,
    /// Labels of columns removed because they were collinear with earlier ones.
    pub dropped: Vec<String>,
    /// Feature name → every column label it produced (retained or dropped).
    pub feature_groups: Vec<(String, Vec<String>)>,
    rows: usize,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.label.clone()).collect()
    }

    /// Selected features in schema order.
    pub fn features(&self) -> Vec<&str> {
        self.feature_groups.iter().map(|(f, _)| f.as_str()).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.columns.len(), |i, j| self.columns[j].values[i])
    }

    /// Column means, i.e. the average covariate profile over trials.
    pub fn column_means(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.values.iter().sum::<f64>() / self.rows as f64)
            .collect()
    }

    /// Build from raw columns, dropping any that are collinear with the
    /// columns kept before them.
    pub fn from_columns(candidates: Vec<DesignColumn>, intercept_included: bool) -> Result<Self> {
        let rows = candidates.first().map_or(0, |c| c.values.len());
        if candidates.iter().any(|c| c.values.len() != rows) {
            return Err(Error::invalid("design columns have unequal lengths"));
        }
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut columns = Vec::new();
        let mut dropped = Vec::new();
        for col in candidates {
            if is_collinear(&col.values, &mut basis) {
                dropped.push(col.label);
            } else {
                columns.push(col);
            }
        }
        Ok(DesignMatrix { columns, intercept_included, dropped, feature_groups: Vec::new(), rows })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Project `values` off the orthonormal `basis` (two Gram–Schmidt passes).
/// On independence the normalized residual is appended to `basis`.
fn is_collinear(values: &[f64], basis: &mut Vec<Vec<f64>>) -> bool {
    let norm = dot(values, values).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return true;
    }
    let mut r = values.to_vec();
    for _ in 0..2 {
        for q in basis.iter() {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
    }
    let rnorm = dot(&r, &r).sqrt();
    if rnorm < COLLINEARITY_TOL * norm {
        return true;
    }
    r.iter_mut().for_each(|x| *x /= rnorm);
    basis.push(r);
    false
}

/// Encode `selected_features` as an intercept-first design matrix.
///
/// Features are laid out in schema order whatever the order of
/// `selected_features`. Categorical features contribute one 0/1 column per
/// observed non-reference category, sorted by name.
pub fn encode_design<S: AsRef<str>>(dataset: &Dataset, selected_features: &[S]) -> Result<DesignMatrix> {
    let schema = dataset.schema();
    let mut wanted = BTreeSet::new();
    for name in selected_features {
        let name = name.as_ref();
        if schema.get(name).is_none() {
            return Err(Error::UnknownFeature(name.to_string()));
        }
        wanted.insert(name);
    }

    let trials = dataset.trials();
    let mut candidates = vec![DesignColumn {
        label: INTERCEPT.to_string(),
        feature: None,
        level: None,
        values: vec![1.0; trials.len()],
    }];
    let mut groups = Vec::new();
    for spec in schema.entries.iter().filter(|s| wanted.contains(s.name.as_str())) {
        let mut labels = Vec::new();
        match spec.kind {
            FeatureKind::Numeric => {
                let values = trials
                    .iter()
                    .map(|t| t.features[&spec.name].as_numeric().expect("validated numeric"))
                    .collect();
                labels.push(spec.name.clone());
                candidates.push(DesignColumn {
                    label: spec.name.clone(),
                    feature: Some(spec.name.clone()),
                    level: None,
                    values,
                });
            }
            FeatureKind::Categorical => {
                let reference = spec.reference_level.as_deref().unwrap_or_default();
                let levels: BTreeSet<&str> = trials
                    .iter()
                    .filter_map(|t| t.features[&spec.name].as_category())
                    .filter(|c| *c != reference)
                    .collect();
                for level in levels {
                    let label = format!("{}={}", spec.name, level);
                    let values = trials
                        .iter()
                        .map(|t| match &t.features[&spec.name] {
                            FeatureValue::Category(c) if c == level => 1.0,
                            _ => 0.0,
                        })
                        .collect();
                    labels.push(label.clone());
                    candidates.push(DesignColumn {
                        label,
                        feature: Some(spec.name.clone()),
                        level: Some(level.to_string()),
                        values,
                    });
                }
            }
        }
        groups.push((spec.name.clone(), labels));
    }
    let mut design = DesignMatrix::from_columns(candidates, true)?;
    design.feature_groups = groups;
    if !design.dropped.is_empty() {
        log::debug!("dropped collinear columns: {:?}", design.dropped);
    }
    Ok(design)
}
