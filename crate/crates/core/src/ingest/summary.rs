use serde::Serialize;

use super::dataset::{Dataset, FeatureValue};
use super::schema::FeatureKind;
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSummary {
    Categorical { name: String, counts: Vec<(String, usize)> },
    Numeric { name: String, min: f64, median: f64, max: f64 },
}

/// Per-feature distribution summary. Category counts cover only categories
/// that occur after grouping, sorted by name, and sum to `m`.
pub fn summarize_features(dataset: &Dataset) -> Vec<FeatureSummary> {
    dataset
        .schema()
        .entries
        .iter()
        .map(|spec| {
            let values = dataset.trials().iter().map(|t| &t.features[&spec.name]);
            match spec.kind {
                FeatureKind::Categorical => {
                    let mut counts = std::collections::BTreeMap::<String, usize>::new();
                    for v in values {
                        if let FeatureValue::Category(c) = v {
                            *counts.entry(c.clone()).or_default() += 1;
                        }
                    }
                    FeatureSummary::Categorical { name: spec.name.clone(), counts: counts.into_iter().collect() }
                }
                FeatureKind::Numeric => {
                    let mut xs: Vec<f64> = values.filter_map(FeatureValue::as_numeric).collect();
                    xs.sort_by(f64::total_cmp);
                    FeatureSummary::Numeric {
                        name: spec.name.clone(),
                        min: xs[0],
                        median: median(&xs),
                        max: xs[xs.len() - 1],
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_dataset, FeatureSchema, FeatureSpec};

    #[test]
    fn counts_and_constant_numeric() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::categorical("c", "A").with_grouping([("a", "A"), ("b", "B"), ("z", "B")]),
            FeatureSpec::numeric("x", 1.0),
        ])
        .unwrap();
        let text = "study_id,trial_id,k,n,c,x\nS,1,1,2,a,5\nS,2,1,2,A,5\nT,3,1,2,b,5\nT,4,1,2,B,5\n";
        let d = parse_dataset(text, &schema).unwrap();
        let s = summarize_features(&d);
        assert_eq!(
            s[0],
            FeatureSummary::Categorical { name: "c".into(), counts: vec![("A".into(), 2), ("B".into(), 2)] }
        );
        assert_eq!(s[1], FeatureSummary::Numeric { name: "x".into(), min: 5.0, median: 5.0, max: 5.0 });
    }
}
