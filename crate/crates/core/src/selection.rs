//! Information-criterion model selection over feature groups and the
//! five-model comparison (null, full, AIC-, BIC- and RMSE-optimal).
//!
//! A categorical feature enters or leaves a model as a whole group of dummy
//! columns. Variance components always come from fits under
//! [`SearchOptions::fit`]; AIC and BIC may be computed from a separate
//! likelihood (see [`SearchOptions::criterion_method`]).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    conditional_residuals, fit_model, fixed_effect_residuals, linear_estimate, FitOptions, FitResult, MetaProblem,
    Method,
};
use crate::error::{Error, Result};
use crate::heterogeneity::{r_squared, HeterogeneityReport};
use crate::ingest::{encode_design, Dataset, DesignMatrix};

/// Criterion values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Largest feature count accepted by exhaustive search.
pub const MAX_EXHAUSTIVE_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Aic,
    Bic,
    Rmse,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 3] = [CriterionKind::Aic, CriterionKind::Bic, CriterionKind::Rmse];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Aic => "AIC",
            CriterionKind::Bic => "BIC",
            CriterionKind::Rmse => "RMSE",
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// All `2^F` subsets of the feature groups.
    #[default]
    Exhaustive,
    /// Greedy forward-backward single-group moves from the null model.
    Stepwise,
}

/// Residuals used for RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    /// `y - Xβ̂`.
    #[default]
    Fixed,
    /// `y - Xβ̂ - ξ̂_j`.
    Conditional,
}

/// Criterion value for a fitted model. AIC and BIC count `q = f + 2`
/// parameters; BIC uses `m - f` observations under REML and `m` under ML.
pub fn criterion(fit: &FitResult, residuals: &[f64], kind: CriterionKind) -> f64 {
    let q = (fit.f + 2) as f64;
    match kind {
        CriterionKind::Aic => -2.0 * fit.loglik + 2.0 * q,
        CriterionKind::Bic => {
            let m_eff = match fit.method {
                Method::Reml => fit.m - fit.f,
                Method::Ml => fit.m,
            };
            -2.0 * fit.loglik + q * (m_eff as f64).ln()
        }
        CriterionKind::Rmse => {
            if residuals.is_empty() {
                return 0.0;
            }
            (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub strategy: Strategy,
    /// Options for the fits that supply variance components, fixed effects
    /// and RMSE.
    pub fit: FitOptions,
    /// Likelihood behind AIC and BIC. When it differs from `fit.method`
    /// every candidate is fitted a second time under this method.
    pub criterion_method: Method,
    pub residuals: ResidualKind,
    /// Candidate feature groups; `None` means every schema feature.
    pub features: Option<Vec<String>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            strategy: Strategy::Exhaustive,
            fit: FitOptions::default(),
            criterion_method: Method::Reml,
            residuals: ResidualKind::Fixed,
            features: None,
        }
    }
}

/// One evaluated subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrailRecord {
    pub features: Vec<String>,
    pub f: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub rmse: Option<f64>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    /// Candidate positions of `features`, for tie-breaking.
    #[serde(skip)]
    pub(crate) positions: Vec<usize>,
}

impl TrailRecord {
    pub fn value(&self, kind: CriterionKind) -> Option<f64> {
        match kind {
            CriterionKind::Aic => self.aic,
            CriterionKind::Bic => self.bic,
            CriterionKind::Rmse => self.rmse,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub kind: CriterionKind,
    pub features: Vec<String>,
    pub value: f64,
    pub trail: Vec<TrailRecord>,
}

/// Tie-aware ordering: criterion value, then coefficient count, then the
/// features' candidate positions compared lexicographically.
fn compare(kind: CriterionKind, a: &TrailRecord, b: &TrailRecord) -> Ordering {
    let (x, y) = (a.value(kind).unwrap_or(f64::INFINITY), b.value(kind).unwrap_or(f64::INFINITY));
    if (x - y).abs() > TIE_TOLERANCE && x.is_finite() | y.is_finite() {
        return x.partial_cmp(&y).unwrap_or(Ordering::Equal);
    }
    a.f.cmp(&b.f).then_with(|| a.positions.cmp(&b.positions))
}

struct Searcher<'a> {
    dataset: &'a Dataset,
    candidates: Vec<String>,
    options: &'a SearchOptions,
}

impl<'a> Searcher<'a> {
    fn new(dataset: &'a Dataset, options: &'a SearchOptions) -> Result<Self> {
        let schema = dataset.schema();
        let candidates: Vec<String> = match &options.features {
            None => schema.names().map(str::to_string).collect(),
            Some(list) => {
                for name in list {
                    if schema.get(name).is_none() {
                        return Err(Error::UnknownFeature(name.clone()));
                    }
                }
                // Schema order keeps subset labels canonical.
                schema.names().filter(|n| list.iter().any(|l| l == n)).map(str::to_string).collect()
            }
        };
        Ok(Searcher { dataset, candidates, options })
    }

    fn evaluate(&self, mask: u64) -> TrailRecord {
        let positions: Vec<usize> = (0..self.candidates.len()).filter(|i| mask >> i & 1 == 1).collect();
        let features: Vec<String> = positions.iter().map(|&i| self.candidates[i].clone()).collect();
        match self.try_evaluate(&features) {
            Ok(record) => TrailRecord { positions, ..record },
            Err(e) => {
                log::info!("skipping subset {features:?}: {e}");
                TrailRecord {
                    features,
                    f: 0,
                    aic: None,
                    bic: None,
                    rmse: None,
                    converged: false,
                    skipped: Some(e.to_string()),
                    positions,
                }
            }
        }
    }

    fn try_evaluate(&self, features: &[String]) -> Result<TrailRecord> {
        let design = encode_design(self.dataset, features)?;
        let problem = MetaProblem::from_dataset(self.dataset, &design)?;
        let fit = fit_model(&problem, &self.options.fit)?;
        let resid = match self.options.residuals {
            ResidualKind::Fixed => fixed_effect_residuals(&fit, &problem),
            ResidualKind::Conditional => conditional_residuals(&fit, &problem),
        };
        let mut converged = fit.converged;
        let crit_fit = if self.options.criterion_method == fit.method {
            fit.clone()
        } else {
            let alt = fit_model(&problem, &FitOptions { method: self.options.criterion_method, ..self.options.fit.clone() })?;
            converged &= alt.converged;
            alt
        };
        Ok(TrailRecord {
            features: features.to_vec(),
            f: fit.f,
            aic: Some(criterion(&crit_fit, &resid, CriterionKind::Aic)),
            bic: Some(criterion(&crit_fit, &resid, CriterionKind::Bic)),
            rmse: Some(criterion(&fit, &resid, CriterionKind::Rmse)),
            converged,
            skipped: None,
            positions: Vec::new(),
        })
    }

    fn exhaustive(&self) -> Result<Vec<TrailRecord>> {
        let count = self.candidates.len();
        if count > MAX_EXHAUSTIVE_FEATURES {
            return Err(Error::invalid(format!(
                "exhaustive search over {count} features exceeds the limit of {MAX_EXHAUSTIVE_FEATURES}; use stepwise"
            )));
        }
        Ok((0..1u64 << count).into_par_iter().map(|mask| self.evaluate(mask)).collect())
    }

    fn stepwise(&self, kind: CriterionKind, cache: &mut BTreeMap<u64, TrailRecord>) -> u64 {
        let mut get = |mask: u64| cache.entry(mask).or_insert_with(|| self.evaluate(mask)).clone();
        let mut current = 0u64;
        let mut current_record = get(current);
        loop {
            let moves: Vec<u64> = (0..self.candidates.len()).map(|i| current ^ (1 << i)).collect();
            let best = moves
                .into_iter()
                .map(|mask| (mask, get(mask)))
                .filter(|(_, r)| r.skipped.is_none())
                .min_by(|a, b| compare(kind, &a.1, &b.1));
            match best {
                Some((mask, record))
                    if record.value(kind).unwrap_or(f64::INFINITY)
                        < current_record.value(kind).unwrap_or(f64::INFINITY) - TIE_TOLERANCE =>
                {
                    current = mask;
                    current_record = record;
                }
                _ => return current,
            }
        }
    }
}

fn best_of(kind: CriterionKind, trail: &[TrailRecord]) -> Result<&TrailRecord> {
    trail
        .iter()
        .filter(|r| r.skipped.is_none())
        .min_by(|a, b| compare(kind, a, b))
        .ok_or_else(|| Error::Numerical("no candidate subset could be fitted".into()))
}

/// Search for the subset of feature groups minimizing each criterion in
/// `kinds`. Exhaustive search fits every subset once and shares the fits
/// between criteria; stepwise search shares a cache. The trail lists every
/// evaluated subset in mask order.
pub fn search_many(dataset: &Dataset, kinds: &[CriterionKind], options: &SearchOptions) -> Result<Vec<SearchOutcome>> {
    let searcher = Searcher::new(dataset, options)?;
    let (trail, winners): (Vec<TrailRecord>, Vec<(CriterionKind, TrailRecord)>) = match options.strategy {
        Strategy::Exhaustive => {
            let trail = searcher.exhaustive()?;
            let winners = kinds.iter().map(|&k| Ok((k, best_of(k, &trail)?.clone()))).collect::<Result<_>>()?;
            (trail, winners)
        }
        Strategy::Stepwise => {
            let mut cache = BTreeMap::new();
            let masks: Vec<(CriterionKind, u64)> =
                kinds.iter().map(|&k| (k, searcher.stepwise(k, &mut cache))).collect();
            let winners = masks.iter().map(|&(k, mask)| (k, cache[&mask].clone())).collect();
            (cache.into_values().collect(), winners)
        }
    };
    winners
        .into_iter()
        .map(|(kind, record)| {
            let value = record
                .value(kind)
                .ok_or_else(|| Error::Numerical("no candidate subset could be fitted".into()))?;
            Ok(SearchOutcome { kind, features: record.features, value, trail: trail.clone() })
        })
        .collect()
}

pub fn search(dataset: &Dataset, kind: CriterionKind, options: &SearchOptions) -> Result<SearchOutcome> {
    Ok(search_many(dataset, &[kind], options)?.remove(0))
}

/// AIC and BIC of one fit under a given likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LikelihoodCriteria {
    pub method: Method,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
}

/// One row of the model comparison. Proportions are back-transformed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparisonRow {
    pub name: String,
    pub features: Vec<String>,
    pub f: usize,
    pub aic: f64,
    pub bic: f64,
    pub rmse: f64,
    pub q: f64,
    pub q_df: usize,
    pub q_pvalue: f64,
    pub sigma2_xi: f64,
    pub i2_xi: f64,
    pub sigma2_zeta: f64,
    pub i2_zeta: f64,
    /// μ̂ on the transformed scale, at the covariate means for moderated models.
    pub mu: f64,
    pub mu_hat: f64,
    pub mu_ci: (f64, f64),
    pub r2_xi: Option<f64>,
    pub r2_zeta: Option<f64>,
    pub converged: bool,
    /// Criteria under the other likelihood, for comparison.
    pub alternate: Option<LikelihoodCriteria>,
    /// Set when the row's model could not be fitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ModelComparisonRow {
    fn failed(name: &str, features: Vec<String>, error: String) -> Self {
        ModelComparisonRow {
            name: name.to_string(),
            features,
            f: 0,
            aic: f64::NAN,
            bic: f64::NAN,
            rmse: f64::NAN,
            q: f64::NAN,
            q_df: 0,
            q_pvalue: f64::NAN,
            sigma2_xi: f64::NAN,
            i2_xi: f64::NAN,
            sigma2_zeta: f64::NAN,
            i2_zeta: f64::NAN,
            mu: f64::NAN,
            mu_hat: f64::NAN,
            mu_ci: (f64::NAN, f64::NAN),
            r2_xi: None,
            r2_zeta: None,
            converged: false,
            alternate: None,
            error: Some(error),
        }
    }
}

/// A fitted protocol model with the design behind it.
#[derive(Debug, Clone)]
pub struct ProtocolModel {
    pub name: String,
    pub features: Vec<String>,
    pub fit: FitResult,
    pub design: DesignMatrix,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    /// Rows ordered by AIC (stable; failed rows last).
    pub rows: Vec<ModelComparisonRow>,
    /// Fitted models in protocol order: Null, Full, AIC, BIC, RMSE.
    pub models: Vec<ProtocolModel>,
    pub trail: Vec<TrailRecord>,
    pub criterion_method: Method,
    pub strategy: Strategy,
}

impl ProtocolOutput {
    pub fn model(&self, name: &str) -> Option<&ProtocolModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Sort rows by AIC ascending, stable on ties, with undefined values last.
pub fn sort_by_aic(rows: &mut [ModelComparisonRow]) {
    rows.sort_by(|a, b| match (a.aic.is_nan(), b.aic.is_nan()) {
        (false, false) => a.aic.partial_cmp(&b.aic).unwrap_or(Ordering::Equal),
        (x, y) => x.cmp(&y),
    });
}

struct RowBuilder<'a> {
    dataset: &'a Dataset,
    options: &'a SearchOptions,
}

impl RowBuilder<'_> {
    fn fit(&self, features: &[String]) -> Result<(DesignMatrix, MetaProblem, FitResult)> {
        let design = encode_design(self.dataset, features)?;
        let problem = MetaProblem::from_dataset(self.dataset, &design)?;
        let fit = fit_model(&problem, &self.options.fit)?;
        Ok((design, problem, fit))
    }

    fn row(
        &self,
        name: &str,
        features: &[String],
        null: Option<&FitResult>,
    ) -> Result<(ModelComparisonRow, ProtocolModel)> {
        let (design, problem, fit) = self.fit(features)?;
        let resid = match self.options.residuals {
            ResidualKind::Fixed => fixed_effect_residuals(&fit, &problem),
            ResidualKind::Conditional => conditional_residuals(&fit, &problem),
        };
        let other = match fit.method {
            Method::Reml => Method::Ml,
            Method::Ml => Method::Reml,
        };
        let alt_fit = fit_model(&problem, &FitOptions { method: other, ..self.options.fit.clone() })?;
        let criteria = |f: &FitResult| LikelihoodCriteria {
            method: f.method,
            loglik: f.loglik,
            aic: criterion(f, &resid, CriterionKind::Aic),
            bic: criterion(f, &resid, CriterionKind::Bic),
        };
        let (crit, alternate) = if self.options.criterion_method == fit.method {
            (criteria(&fit), criteria(&alt_fit))
        } else {
            (criteria(&alt_fit), criteria(&fit))
        };
        let het = HeterogeneityReport::compute(&fit, &problem)?;
        let pooled = linear_estimate(&fit, &design.column_means(), 0.95)?;
        let r2 = match null {
            Some(null_fit) => Some(r_squared(&fit, null_fit)?),
            None => None,
        };
        let row = ModelComparisonRow {
            name: name.to_string(),
            features: features.to_vec(),
            f: fit.f,
            aic: crit.aic,
            bic: crit.bic,
            rmse: criterion(&fit, &resid, CriterionKind::Rmse),
            q: het.q,
            q_df: het.q_df,
            q_pvalue: het.q_pvalue,
            sigma2_xi: fit.varcomps.sigma2_xi,
            i2_xi: het.i2_xi,
            sigma2_zeta: fit.varcomps.sigma2_zeta,
            i2_zeta: het.i2_zeta,
            mu: pooled.mu,
            mu_hat: pooled.proportion,
            mu_ci: pooled.proportion_ci,
            r2_xi: r2.and_then(|r| r.xi),
            r2_zeta: r2.and_then(|r| r.zeta),
            converged: fit.converged && alt_fit.converged,
            alternate: Some(alternate),
            error: None,
        };
        let model = ProtocolModel { name: name.to_string(), features: features.to_vec(), fit, design };
        Ok((row, model))
    }
}

/// Fit the null, full, AIC-, BIC- and RMSE-optimal models and assemble the
/// comparison rows. R² of each moderated model is taken against the null
/// fit. A failing non-null model yields an annotated row; a failing null
/// model is an error.
pub fn five_model_protocol(dataset: &Dataset, options: &SearchOptions) -> Result<ProtocolOutput> {
    let outcomes = search_many(dataset, &CriterionKind::ALL, options)?;
    let trail = outcomes[0].trail.clone();
    let full: Vec<String> = Searcher::new(dataset, options)?.candidates;

    let builder = RowBuilder { dataset, options };
    let (null_row, null_model) = builder.row("Null", &[], None)?;
    let null_fit = null_model.fit.clone();

    let mut rows = vec![null_row];
    let mut models = vec![null_model];
    let specs: Vec<(&str, Vec<String>)> = std::iter::once(("Full", full))
        .chain(outcomes.iter().map(|o| (o.kind.name(), o.features.clone())))
        .collect();
    for (name, features) in specs {
        match builder.row(name, &features, Some(&null_fit)) {
            Ok((row, model)) => {
                rows.push(row);
                models.push(model);
            }
            Err(e) => {
                log::warn!("{name} model failed: {e}");
                rows.push(ModelComparisonRow::failed(name, features, e.to_string()));
            }
        }
    }
    sort_by_aic(&mut rows);
    Ok(ProtocolOutput { rows, models, trail, criterion_method: options.criterion_method, strategy: options.strategy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::VarianceComponents;
    use crate::ingest::{FeatureSchema, FeatureSpec, FeatureValue, TrialRecord};
    use crate::simulate::Xoshiro256;
    use crate::transforms::ft_inverse_clamped;

    fn fake_fit(loglik: f64, f: usize, m: usize, method: Method) -> FitResult {
        FitResult {
            labels: vec!["intercept".into()],
            beta: nalgebra::DVector::zeros(f),
            cov_beta: nalgebra::DMatrix::zeros(f, f),
            varcomps: VarianceComponents::ZERO,
            loglik,
            method,
            converged: true,
            n_evaluations: 0,
            m,
            h: 1,
            f,
            t_intervals: false,
            warnings: vec![],
        }
    }

    #[test]
    fn criterion_definitions() {
        let fit = fake_fit(0.0, 1, 10, Method::Ml);
        assert_eq!(criterion(&fit, &[], CriterionKind::Aic), 6.0);
        // m_eff = e² exactly is not an integer; check q·ln(m_eff) directly.
        let bic = criterion(&fake_fit(0.0, 1, 8, Method::Reml), &[], CriterionKind::Bic);
        assert!((bic - 3.0 * 7f64.ln()).abs() < 1e-12);
        assert_eq!(criterion(&fit, &[0.0; 4], CriterionKind::Rmse), 0.0);
        assert_eq!(criterion(&fit, &[3.0, -3.0], CriterionKind::Rmse), 3.0);
    }

    /// Three study-level features: `signal` shifts the effect by 0.3, the
    /// others are noise.
    fn toy(seed: u64, signal: f64) -> Dataset {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::categorical("signal", "no"),
            FeatureSpec::numeric("noise", 1.0),
            FeatureSpec::categorical("color", "red"),
        ])
        .unwrap();
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut trials = Vec::new();
        for j in 0..12 {
            let on = j % 2 == 0;
            let xi = 0.1 * rng.normal();
            let noise = rng.normal();
            let color = ["red", "blue", "green"][j % 3];
            for i in 0..4 {
                let n = 400;
                let theta = 1.0 + if on { signal } else { 0.0 } + xi + 0.05 * rng.normal();
                let t = theta + rng.normal() * (1.0 / 1602f64).sqrt();
                let k = (ft_inverse_clamped(t, n as f64).unwrap() * n as f64).round() as u64;
                let mut features = BTreeMap::new();
                features.insert("signal".into(), FeatureValue::Category(if on { "yes" } else { "no" }.into()));
                features.insert("noise".into(), FeatureValue::Numeric(noise));
                features.insert("color".into(), FeatureValue::Category(color.into()));
                trials.push(TrialRecord { study_id: format!("S{j}"), trial_id: format!("{j}.{i}"), k, n, features });
            }
        }
        Dataset::new(trials, schema).unwrap()
    }

    #[test]
    fn strong_signal_is_selected() {
        let data = toy(1, 0.3);
        for kind in [CriterionKind::Aic, CriterionKind::Bic] {
            let out = search(&data, kind, &SearchOptions::default()).unwrap();
            assert!(out.features.contains(&"signal".to_string()), "{kind}: {:?}", out.features);
            assert_eq!(out.trail.len(), 8);
        }
    }

    #[test]
    fn exhaustive_dominates_stepwise_dominates_null() {
        for seed in 0..4 {
            let data = toy(seed, 0.1);
            for kind in CriterionKind::ALL {
                let ex = search(&data, kind, &SearchOptions::default()).unwrap();
                let sw = search(&data, kind, &SearchOptions { strategy: Strategy::Stepwise, ..Default::default() })
                    .unwrap();
                let null = ex.trail[0].value(kind).unwrap();
                assert!(ex.value <= sw.value + TIE_TOLERANCE);
                assert!(sw.value <= null + TIE_TOLERANCE);
            }
        }
    }

    #[test]
    fn unknown_candidate_feature() {
        let data = toy(0, 0.1);
        let opts = SearchOptions { features: Some(vec!["nope".into()]), ..Default::default() };
        assert!(matches!(search(&data, CriterionKind::Aic, &opts), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn ties_prefer_fewer_coefficients() {
        let rec = |features: &[usize], f, aic| TrailRecord {
            features: features.iter().map(|i| format!("x{i}")).collect(),
            positions: features.to_vec(),
            f,
            aic: Some(aic),
            bic: None,
            rmse: None,
            converged: true,
            skipped: None,
        };
        let a = rec(&[1], 3, 1.0);
        let b = rec(&[0], 2, 1.0 + 1e-12);
        let c = rec(&[0, 2], 3, 1.0);
        assert_eq!(compare(CriterionKind::Aic, &a, &b), Ordering::Greater);
        assert_eq!(compare(CriterionKind::Aic, &c, &a), Ordering::Less);
        assert_eq!(compare(CriterionKind::Aic, &rec(&[0, 1], 3, 1.0), &c), Ordering::Less);
    }

    #[test]
    fn protocol_rows() {
        let data = toy(2, 0.3);
        let out = five_model_protocol(&data, &SearchOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 5);
        assert_eq!(out.models.len(), 5);
        let null = out.rows.iter().find(|r| r.name == "Null").unwrap();
        assert_eq!(null.f, 1);
        assert!(null.r2_xi.is_none() && null.r2_zeta.is_none());
        for pair in out.rows.windows(2) {
            assert!(pair[0].aic <= pair[1].aic);
        }
        for row in &out.rows {
            assert!((0.0..=1.0).contains(&row.mu_hat));
            assert_eq!(row.alternate.unwrap().method, Method::Ml);
        }
    }

    #[test]
    fn no_moderators_means_full_is_null() {
        let data = toy(3, 0.0);
        let opts = SearchOptions { features: Some(vec![]), ..Default::default() };
        let out = five_model_protocol(&data, &opts).unwrap();
        let null = out.rows.iter().find(|r| r.name == "Null").unwrap();
        let full = out.rows.iter().find(|r| r.name == "Full").unwrap();
        assert_eq!(full.f, 1);
        assert_eq!(full.aic, null.aic);
        assert_eq!(full.r2_xi, Some(0.0));
        assert_eq!(full.r2_zeta, Some(0.0));
    }

    #[test]
    fn ml_criteria_mode() {
        let data = toy(4, 0.3);
        let opts = SearchOptions { criterion_method: Method::Ml, ..Default::default() };
        let out = five_model_protocol(&data, &opts).unwrap();
        for row in &out.rows {
            let alt = row.alternate.unwrap();
            assert_eq!(alt.method, Method::Reml);
        }
        assert_eq!(out.criterion_method, Method::Ml);
    }
}
