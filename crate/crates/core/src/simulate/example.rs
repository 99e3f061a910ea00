//! Synthetic stand-in for a sentiment-classifier accuracy corpus: 20 studies,
//! 195 trials and twelve study features. Category levels and reference levels
//! follow the feature schema shipped in `data/example_schema.toml`.

use std::collections::BTreeMap;

use super::rng::Xoshiro256;
use super::{draw_count, SimMode};
use crate::error::{Error, Result};
use crate::ingest::{encode_design, Dataset, FeatureSchema, FeatureSpec, FeatureValue, TrialRecord};

pub const EXAMPLE_SEED: u64 = 20_240_601;

const STUDY_SIZES: [usize; 20] = [2, 3, 4, 5, 5, 6, 6, 7, 8, 8, 9, 9, 10, 10, 11, 12, 13, 14, 14, 39];

/// Trials per study in the example layout (sums to 195).
pub fn example_study_sizes() -> Vec<usize> {
    STUDY_SIZES.to_vec()
}

const CLASSES: [&str; 2] = ["2 classes", "3 or 10 classes"];
const ML: [&str; 4] = ["Classical ML", "SVM/Clustering", "Tree-based", "Neural Networks/Deep Learning"];
const NOT_SPECIFIED: &str = "Not specified";
const N_FE: [&str; 3] = ["1 method", "2 methods", NOT_SPECIFIED];
const FE: [&str; 7] = [
    "TF-IDF",
    "FastText",
    "FastText + TF-IDF",
    "Bag of Words",
    "Word2Vec",
    "Keras Embedding Layer",
    "Other",
];
const LANGUAGE: [&str; 2] = ["English", "Other"];
const LABELING: [&str; 4] = ["Human annotation", "Lexicon Approach", "Other", NOT_SPECIFIED];
const MAJORITY: [&str; 6] = ["[0; 0.4]", "[0.41, 0.5]", "[0.51, 0.6]", "[0.61, 0.9]", "[0.91, 1.0]", NOT_SPECIFIED];
const TOPIC: [&str; 4] = ["Brands", "COVID-19", NOT_SPECIFIED, "Other"];
const DATASET_TYPE: [&str; 2] = ["Existing", "Self-Scraped"];
const CONFUSION: [&str; 2] = ["No", "Yes"];

/// Effects on the transformed scale, keyed by `feature=level`.
const EFFECTS: [(&str, f64); 8] = [
    ("sentiment_classes=3 or 10 classes", -0.16),
    ("ml_model=SVM/Clustering", 0.05),
    ("ml_model=Tree-based", 0.03),
    ("ml_model=Neural Networks/Deep Learning", 0.13),
    ("language=Other", -0.18),
    ("fe_method=Keras Embedding Layer", 0.10),
    ("fe_method=Other", 0.07),
    ("confusion_matrix=Yes", 0.04),
];

fn identity<'a>(levels: &'a [&'a str]) -> impl Iterator<Item = (&'a str, &'a str)> {
    levels.iter().map(|l| (*l, *l))
}

/// Feature schema of the example corpus.
pub fn example_schema() -> FeatureSchema {
    let cat = |name: &str, levels: &[&str]| FeatureSpec::categorical(name, levels[0]);
    FeatureSchema {
        entries: vec![
            FeatureSpec::numeric("train_test_ratio", 1.0),
            FeatureSpec::numeric("train_size", 1000.0),
            cat("sentiment_classes", &CLASSES)
                .with_grouping(identity(&CLASSES))
                .with_grouping([("3 classes", CLASSES[1]), ("10 classes", CLASSES[1])]),
            cat("ml_model", &ML)
                .with_grouping(identity(&ML))
                .with_grouping([
                    ("Logistic Regression", ML[0]),
                    ("Naive Bayes", ML[0]),
                    ("Multinomial Naive Bayes", ML[0]),
                    ("Genetic Algorithm", ML[0]),
                    (NOT_SPECIFIED, NOT_SPECIFIED),
                ]),
            cat("n_fe_methods", &N_FE),
            cat("fe_method", &FE).with_grouping(identity(&FE)).with_grouping([
                ("Bag of Words + TF-IDF", "Other"),
                ("Count Vector", "Other"),
                ("N-Grams", "Other"),
                ("GloVe", "Other"),
                ("BERT Tokenizer", "Other"),
            ]),
            cat("language", &LANGUAGE)
                .with_grouping(identity(&LANGUAGE))
                .with_grouping([("Nepali", "Other"), ("Italian", "Other"), ("Tamil", "Other")]),
            cat("labeling", &LABELING),
            cat("majority_class", &MAJORITY),
            cat("topic", &TOPIC).with_grouping(identity(&TOPIC)).with_grouping([
                ("LGBTQ", "Other"),
                ("Railway infrastructure", "Other"),
            ]),
            cat("dataset_type", &DATASET_TYPE),
            cat("confusion_matrix", &CONFUSION),
        ],
    }
}

/// Assign one level per study so that every level is used: a shuffled
/// permutation of studies, cycled over the levels.
fn cycle_levels(rng: &mut Xoshiro256, h: usize, levels: &[&str]) -> Vec<String> {
    let mut order: Vec<usize> = (0..h).collect();
    rng.shuffle(&mut order);
    let mut out = vec![String::new(); h];
    for (slot, &j) in order.iter().enumerate() {
        out[j] = levels[slot % levels.len()].to_string();
    }
    out
}

fn build(seed: u64, attempt: u64) -> Result<Dataset> {
    let h = STUDY_SIZES.len();
    let mut rng = Xoshiro256::stream(seed, &[attempt, u64::MAX]);
    let study_levels: Vec<(&str, Vec<String>)> = [
        ("sentiment_classes", &CLASSES[..]),
        ("n_fe_methods", &N_FE[..]),
        ("language", &LANGUAGE[..]),
        ("labeling", &LABELING[..]),
        ("majority_class", &MAJORITY[..]),
        ("topic", &TOPIC[..]),
        ("dataset_type", &DATASET_TYPE[..]),
        ("confusion_matrix", &CONFUSION[..]),
    ]
    .into_iter()
    .map(|(name, levels)| (name, cycle_levels(&mut rng, h, levels)))
    .collect();
    let effects: BTreeMap<&str, f64> = EFFECTS.into_iter().collect();
    let effect = |name: &str, level: &str| effects.get(format!("{name}={level}").as_str()).copied().unwrap_or(0.0);

    let mu = 0.8f64.sqrt().asin() + 0.14;
    let (sigma_xi, sigma_zeta) = (0.012f64.sqrt(), 0.006f64.sqrt());
    let mut trials = Vec::with_capacity(STUDY_SIZES.iter().sum());
    for (j, &size) in STUDY_SIZES.iter().enumerate() {
        let study_id = format!("S{:02}", j + 1);
        let mut srng = Xoshiro256::stream(seed, &[attempt, j as u64, u64::MAX]);
        let xi = sigma_xi * srng.normal();
        let mut base = BTreeMap::new();
        let mut study_shift = 0.0;
        for (name, levels) in &study_levels {
            study_shift += effect(name, &levels[j]);
            base.insert(name.to_string(), FeatureValue::Category(levels[j].clone()));
        }
        let many_classes = study_levels[0].1[j] == CLASSES[1];
        for i in 0..size {
            let mut trng = Xoshiro256::stream(seed, &[attempt, j as u64, i as u64]);
            let mut features = base.clone();
            // Studies with more than two classes never name their model, so
            // that dummy duplicates the class dummy and is dropped.
            let ml = if many_classes { NOT_SPECIFIED } else { ML[(i + j) % ML.len()] };
            let fe = FE[trng.between(0, FE.len() as u64 - 1) as usize];
            let ratio = [0.25, 0.5, 1.0, 1.5, 2.33, 3.0, 4.0, 9.0][trng.between(0, 7) as usize];
            let train_size = trng.between(500, 60_000) as f64;
            features.insert("ml_model".into(), FeatureValue::Category(ml.into()));
            features.insert("fe_method".into(), FeatureValue::Category(fe.into()));
            features.insert("train_test_ratio".into(), FeatureValue::Numeric(ratio));
            features.insert("train_size".into(), FeatureValue::Numeric(train_size / 1000.0));

            let n = trng.between(300, 20_000);
            let theta = mu + study_shift + effect("ml_model", ml) + effect("fe_method", fe) + xi + sigma_zeta * trng.normal();
            let (k, _) = draw_count(&mut trng, SimMode::Gaussian, theta, n)?;
            trials.push(TrialRecord { study_id: study_id.clone(), trial_id: format!("{study_id}.{}", i + 1), k, n, features });
        }
    }
    Dataset::new(trials, example_schema())
}

/// The bundled example corpus. Draws are repeated under successive stream
/// keys until the full twelve-feature design has 29 columns with exactly
/// one collinear dummy dropped (`ml_model=Not specified`).
pub fn example_dataset(seed: u64) -> Result<Dataset> {
    let names: Vec<String> = example_schema().names().map(str::to_string).collect();
    for attempt in 0..64 {
        let data = build(seed, attempt)?;
        let design = encode_design(&data, &names)?;
        if design.ncols() == 29 && design.dropped == ["ml_model=Not specified"] {
            return Ok(data);
        }
    }
    Err(Error::Numerical("no attempt produced the target design rank".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let data = example_dataset(EXAMPLE_SEED).unwrap();
        assert_eq!(data.h(), 20);
        assert_eq!(data.m(), 195);
        assert_eq!(data.group_sizes(), example_study_sizes());
        assert_eq!(example_schema().len(), 12);
    }

    #[test]
    fn schema_round_trips_through_toml() {
        let s = example_schema();
        assert_eq!(FeatureSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }
}
