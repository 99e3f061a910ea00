use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Category(String),
}

impl FeatureValue {
    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            FeatureValue::Numeric(x) => Some(*x),
            FeatureValue::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            FeatureValue::Category(c) => Some(c),
            FeatureValue::Numeric(_) => None,
        }
    }
}

/// One reported accuracy: `k` of `n` test instances classified correctly.
///
/// Feature values are stored after grouping and scaling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub study_id: String,
    pub trial_id: String,
    pub k: u64,
    pub n: u64,
    pub features: BTreeMap<String, FeatureValue>,
}

impl TrialRecord {
    pub fn proportion(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StudyBlock {
    pub study_id: String,
    pub range: Range<usize>,
}

impl StudyBlock {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Validated trials, grouped contiguously by study in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<TrialRecord>,
    schema: FeatureSchema,
    studies: Vec<StudyBlock>,
}

impl Dataset {
    /// Validate `trials` against `schema` and group them by study.
    ///
    /// The grouping is a stable sort keyed on each study's first appearance,
    /// so row order within a study is preserved.
    pub fn new(trials: Vec<TrialRecord>, schema: FeatureSchema) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InsufficientData { required: 1, available: 0 });
        }
        for t in &trials {
            if t.n == 0 {
                return Err(Error::invalid(format!("trial `{}`: n must be positive", t.trial_id)));
            }
            if t.k > t.n {
                return Err(Error::invalid(format!(
                    "trial `{}`: k = {} exceeds n = {}",
                    t.trial_id, t.k, t.n
                )));
            }
            for spec in &schema.entries {
                let value = t.features.get(&spec.name).ok_or_else(|| {
                    Error::invalid(format!("trial `{}`: missing feature `{}`", t.trial_id, spec.name))
                })?;
                let ok = match (spec.kind, value) {
                    (FeatureKind::Numeric, FeatureValue::Numeric(x)) => x.is_finite(),
                    (FeatureKind::Categorical, FeatureValue::Category(_)) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::invalid(format!(
                        "trial `{}`: feature `{}` has the wrong kind or a non-finite value",
                        t.trial_id, spec.name
                    )));
                }
            }
        }

        let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &trials {
            let next = first_seen.len();
            first_seen.entry(t.study_id.as_str()).or_insert(next);
        }
        let rank: Vec<usize> = trials.iter().map(|t| first_seen[t.study_id.as_str()]).collect();
        let mut order: Vec<usize> = (0..trials.len()).collect();
        order.sort_by_key(|&i| rank[i]);
        let mut slots: Vec<Option<TrialRecord>> = trials.into_iter().map(Some).collect();
        let trials: Vec<TrialRecord> = order.iter().map(|&i| slots[i].take().unwrap()).collect();

        let mut studies: Vec<StudyBlock> = Vec::new();
        for (i, t) in trials.iter().enumerate() {
            match studies.last_mut() {
                Some(block) if block.study_id == t.study_id => block.range.end = i + 1,
                _ => studies.push(StudyBlock { study_id: t.study_id.clone(), range: i..i + 1 }),
            }
        }
        Ok(Dataset { trials, schema, studies })
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn studies(&self) -> &[StudyBlock] {
        &self.studies
    }

    /// Number of trials.
    pub fn m(&self) -> usize {
        self.trials.len()
    }

    /// Number of distinct studies.
    pub fn h(&self) -> usize {
        self.studies.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.studies.iter().map(StudyBlock::len).collect()
    }

    /// Serialize back to the ingest CSV layout. Numeric features are written
    /// on their raw (unscaled) scale.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["study_id", "trial_id", "k", "n"];
        header.extend(self.schema.names());
        w.write_record(&header).expect("in-memory write");
        for t in &self.trials {
            let mut row = vec![t.study_id.clone(), t.trial_id.clone(), t.k.to_string(), t.n.to_string()];
            for spec in &self.schema.entries {
                row.push(match &t.features[&spec.name] {
                    FeatureValue::Numeric(x) => format!("{}", x * spec.scale),
                    FeatureValue::Category(c) => c.clone(),
                });
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn parse_count(field: &str, what: &str, line: u64) -> Result<u64> {
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 => Ok(x as u64),
        _ => Err(Error::Parse { line, message: format!("{what} must be a non-negative integer, got `{field}`") }),
    }
}

/// Parse trial-level CSV text against `schema`.
///
/// Required columns: `study_id`, `trial_id`, `n`, either `k` or `accuracy`,
/// and one column per schema feature. When only `accuracy` is given,
/// `k = round(accuracy * n)`.
pub fn parse_dataset(csv_text: &str, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    if csv_text.trim().is_empty() {
        return Err(Error::invalid("empty CSV input"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let study_col = require("study_id")?;
    let trial_col = require("trial_id")?;
    let n_col = require("n")?;
    let k_col = column("k");
    let acc_col = column("accuracy");
    if k_col.is_none() && acc_col.is_none() {
        return Err(Error::MissingColumn("k".into()));
    }
    let feature_cols: Vec<usize> =
        schema.entries.iter().map(|e| require(&e.name)).collect::<Result<_>>()?;

    let mut trials = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let fail = |message: String| Error::Parse { line, message };

        let study_id = field(study_col).to_string();
        if study_id.is_empty() {
            return Err(fail("empty study_id".into()));
        }
        let n = parse_count(field(n_col), "n", line)?;
        if n == 0 {
            return Err(fail("n must be positive".into()));
        }
        let k = match k_col {
            Some(c) if !field(c).is_empty() => parse_count(field(c), "k", line)?,
            _ => {
                let raw = acc_col.map(field).unwrap_or("");
                let acc: f64 = raw
                    .parse()
                    .map_err(|_| fail(format!("accuracy must be a number, got `{raw}`")))?;
                if !(0.0..=1.0).contains(&acc) {
                    return Err(fail(format!("accuracy {acc} outside [0, 1]")));
                }
                (acc * n as f64).round() as u64
            }
        };
        if k > n {
            return Err(fail(format!("k = {k} exceeds n = {n}")));
        }

        let mut features = BTreeMap::new();
        for (spec, &col) in schema.entries.iter().zip(&feature_cols) {
            let raw = field(col);
            let value = match spec.kind {
                FeatureKind::Numeric => {
                    let x: f64 = raw.parse().map_err(|_| {
                        fail(format!("feature `{}`: expected a number, got `{raw}`", spec.name))
                    })?;
                    if !x.is_finite() {
                        return Err(fail(format!("feature `{}`: non-finite value", spec.name)));
                    }
                    FeatureValue::Numeric(x / spec.scale)
                }
                FeatureKind::Categorical => {
                    if raw.is_empty() {
                        return Err(fail(format!(
                            "feature `{}`: empty category (encode missing values explicitly)",
                            spec.name
                        )));
                    }
                    let category = spec.resolve_category(raw).ok_or_else(|| {
                        fail(format!("feature `{}`: unknown category `{raw}`", spec.name))
                    })?;
                    FeatureValue::Category(category)
                }
            };
            features.insert(spec.name.clone(), value);
        }
        trials.push(TrialRecord {
            study_id,
            trial_id: field(trial_col).to_string(),
            k,
            n,
            features,
        });
    }
    if trials.is_empty() {
        return Err(Error::invalid("CSV has a header but no trials"));
    }
    Dataset::new(trials, schema.clone())
}
