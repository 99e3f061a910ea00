//! Meta-analysis of proportions with a three-level random-effects model.
//!
//! The pipeline runs from trial-level counts to pooled estimates:
//!
//! 1. [`ingest`] parses trial CSV data against a [`FeatureSchema`] and builds
//!    moderator design matrices.
//! 2. [`transforms`] maps each accuracy `k/n` to the Freeman–Tukey double
//!    arcsine scale and back.
//! 3. [`engine`] fits the between-study / within-study variance components by
//!    (restricted) maximum likelihood and estimates fixed effects by GLS.
//! 4. [`heterogeneity`] reports Cochran's Q, level-wise I² and R².
//! 5. [`selection`] runs the null / full / AIC / BIC / RMSE model protocol.
//! 6. [`report`] renders forest plots and comparison / regression tables.
//!
//! [`simulate`] generates synthetic datasets from the same generative model.

pub mod engine;
pub mod error;
pub mod heterogeneity;
pub mod ingest;
pub mod report;
pub mod selection;
pub mod simulate;
pub(crate) mod stats;
pub mod transforms;

pub use engine::{
    fit_model, log_likelihood, marginal_covariance, pooled_estimate, predict_study_effects,
    FitOptions, FitResult, Method, MetaProblem, PooledEstimate, StudyEffect, VarianceComponents,
};
pub use error::{Error, Result};
pub use ingest::{
    encode_design, parse_dataset, summarize_features, Dataset, DesignMatrix, FeatureKind,
    FeatureSchema, FeatureSpec, FeatureValue, TrialRecord,
};
pub use heterogeneity::{cochran_q, i_squared_levels, pooled_sampling_variance, r_squared, HeterogeneityReport};
pub use selection::{
    criterion, five_model_protocol, search, CriterionKind, ModelComparisonRow, SearchOptions, Strategy,
};
pub use simulate::{generate, recovery_experiment, SimConfig};
pub use transforms::{alt_transform, ft_inverse, ft_transform, shapiro_wilk, EffectSample};
