//! Trial data ingestion: feature schema, CSV parsing and moderator encoding.

mod dataset;
mod design;
mod schema;
mod summary;

pub use dataset::{parse_dataset, Dataset, FeatureValue, StudyBlock, TrialRecord};
pub use design::{encode_design, DesignColumn, DesignMatrix, COLLINEARITY_TOL, INTERCEPT};
pub use schema::{FeatureKind, FeatureSchema, FeatureSpec};
pub use summary::{summarize_features, FeatureSummary};
