use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

fn default_scale() -> f64 {
    1.0
}

fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

/// One declared moderator.
///
/// Numeric values are divided by `scale` on load. Categorical values are
/// mapped through `grouping` (raw text to coarse category); the
/// `reference_level` is the post-grouping category that receives no dummy
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default = "default_scale", skip_serializing_if = "is_unit")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grouping: BTreeMap<String, String>,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>, scale: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
            scale,
            reference_level: None,
            grouping: BTreeMap::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, reference_level: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            scale: 1.0,
            reference_level: Some(reference_level.into()),
            grouping: BTreeMap::new(),
        }
    }

    pub fn with_grouping<I, K, V>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.grouping
            .extend(pairs.into_iter().map(|(k, v)| (k.into(), v.into())));
        self
    }

    /// Map a raw category onto its coarse category.
    ///
    /// With an empty grouping every value is accepted as-is. Otherwise the
    /// value must be a grouping key, a grouping target, or the reference level.
    pub fn resolve_category(&self, raw: &str) -> Option<String> {
        if let Some(target) = self.grouping.get(raw) {
            return Some(target.clone());
        }
        if self.grouping.is_empty()
            || self.grouping.values().any(|v| v == raw)
            || self.reference_level.as_deref() == Some(raw)
        {
            return Some(raw.to_string());
        }
        None
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("feature with empty name".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!(
                "feature `{}`: scale must be positive, got {}",
                self.name, self.scale
            )));
        }
        match self.kind {
            FeatureKind::Numeric => {
                if self.reference_level.is_some() || !self.grouping.is_empty() {
                    return Err(Error::Config(format!(
                        "numeric feature `{}` cannot declare a reference level or grouping",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical => {
                let Some(reference) = self.reference_level.as_deref() else {
                    return Err(Error::Config(format!(
                        "categorical feature `{}` needs a reference_level",
                        self.name
                    )));
                };
                // The reference must survive grouping unchanged.
                if let Some(target) = self.grouping.get(reference) {
                    if target != reference {
                        return Err(Error::Config(format!(
                            "feature `{}`: reference level `{reference}` is grouped into `{target}`",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of feature declarations, loaded from TOML:
///
/// ```toml
/// [[feature]]
/// name = "train_size"
/// kind = "numeric"
/// scale = 1000.0
///
/// [[feature]]
/// name = "language"
/// kind = "categorical"
/// reference_level = "English"
/// grouping = { Nepali = "Other", Italian = "Other" }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    #[serde(rename = "feature", default)]
    pub entries: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(entries: Vec<FeatureSpec>) -> Result<Self> {
        let schema = FeatureSchema { entries };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: FeatureSchema =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for entry in &self.entries {
            entry.validate()?;
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature `{}`", entry.name)));
            }
            if matches!(entry.name.as_str(), "study_id" | "trial_id" | "k" | "n" | "accuracy") {
                return Err(Error::Config(format!(
                    "feature name `{}` collides with a reserved column",
                    entry.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [[feature]]
            name = "train_size"
            kind = "numeric"
            scale = 1000.0

            [[feature]]
            name = "language"
            kind = "categorical"
            reference_level = "English"
            grouping = { Nepali = "Other", Tamil = "Other" }
        "#;
        let schema = FeatureSchema::from_toml_str(text).unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema.entries[0].scale, 1000.0);
        let back = FeatureSchema::from_toml_str(&schema.to_toml_string()).unwrap();
        assert_eq!(back, schema);
    }

    #[test]
    fn rejects_missing_reference() {
        let text = "[[feature]]\nname = \"x\"\nkind = \"categorical\"\n";
        assert!(matches!(FeatureSchema::from_toml_str(text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_nonpositive_scale_and_duplicates() {
        assert!(FeatureSchema::new(vec![FeatureSpec::numeric("a", 0.0)]).is_err());
        assert!(FeatureSchema::new(vec![
            FeatureSpec::numeric("a", 1.0),
            FeatureSpec::numeric("a", 2.0)
        ])
        .is_err());
    }

    #[test]
    fn rejects_grouped_away_reference() {
        let spec = FeatureSpec::categorical("lang", "Tamil").with_grouping([("Tamil", "Other")]);
        assert!(FeatureSchema::new(vec![spec]).is_err());
    }

    #[test]
    fn category_resolution() {
        let spec = FeatureSpec::categorical("lang", "English")
            .with_grouping([("Nepali", "Other"), ("Italian", "Other")]);
        assert_eq!(spec.resolve_category("Nepali").as_deref(), Some("Other"));
        assert_eq!(spec.resolve_category("Other").as_deref(), Some("Other"));
        assert_eq!(spec.resolve_category("English").as_deref(), Some("English"));
        assert_eq!(spec.resolve_category("Klingon"), None);

        let open = FeatureSpec::categorical("topic", "Brands");
        assert_eq!(open.resolve_category("Anything").as_deref(), Some("Anything"));
    }
}
