//! Synthetic multi-study datasets drawn from the three-level model, and
//! estimator recovery experiments on them.

mod example;
mod rng;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit_model, FitOptions, MetaProblem};
use crate::error::{Error, Result};
use crate::ingest::{encode_design, Dataset, FeatureSchema, FeatureSpec, FeatureValue, TrialRecord};
use crate::transforms::ft_inverse_clamped;

pub use example::{example_dataset, example_schema, example_study_sizes, EXAMPLE_SEED};
pub use rng::Xoshiro256;

/// Study-level draws use this trial index in their stream key.
const STUDY_STREAM: u64 = u64::MAX;

/// Clamp rate above which `generate` warns.
pub const CLAMP_WARN_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Observed effect drawn on the transformed scale with sampling
    /// variance `1/(4n+2)`, then rounded to a count.
    #[default]
    Gaussian,
    /// Count drawn as `Binomial(n, p)` with `p` back-transformed from the
    /// true trial effect.
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeratorKind {
    /// Standard-normal covariate.
    Numeric,
    /// Fair-coin "no"/"yes" category, reference "no".
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeratorLevel {
    #[default]
    Study,
    Trial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeratorSpec {
    pub name: String,
    pub effect: f64,
    pub kind: ModeratorKind,
    #[serde(default)]
    pub level: ModeratorLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrialsPerStudy {
    Constant(usize),
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub h: usize,
    pub trials_per_study: TrialsPerStudy,
    /// Population effect μ on the double-arcsine scale.
    pub mu: f64,
    pub sigma2_xi: f64,
    pub sigma2_zeta: f64,
    pub n_range: (u64, u64),
    #[serde(default)]
    pub mode: SimMode,
    pub seed: u64,
    #[serde(default, rename = "moderator", skip_serializing_if = "Vec::is_empty")]
    pub moderators: Vec<ModeratorSpec>,
}

impl SimConfig {
    /// h = 20 studies, m = 195 trials, population accuracy 0.80 with
    /// σ²_ξ = 0.020 and σ²_ζ = 0.008.
    pub fn example_null(seed: u64) -> Self {
        SimConfig {
            h: 20,
            trials_per_study: TrialsPerStudy::List(example_study_sizes()),
            mu: 0.8f64.sqrt().asin(),
            sigma2_xi: 0.020,
            sigma2_zeta: 0.008,
            n_range: (500, 5000),
            mode: SimMode::Gaussian,
            seed,
            moderators: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.h == 0 {
            return bad("h must be at least 1".into());
        }
        match &self.trials_per_study {
            TrialsPerStudy::Constant(0) => return bad("trials_per_study must be at least 1".into()),
            TrialsPerStudy::List(l) if l.len() != self.h => {
                return bad(format!("trials_per_study lists {} studies, h = {}", l.len(), self.h))
            }
            TrialsPerStudy::List(l) if l.contains(&0) => return bad("every study needs a trial".into()),
            _ => {}
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        for (name, x) in [("sigma2_xi", self.sigma2_xi), ("sigma2_zeta", self.sigma2_zeta)] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        let (lo, hi) = self.n_range;
        if lo < 1 || lo > hi {
            return bad(format!("invalid n_range ({lo}, {hi})"));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.moderators {
            if !m.effect.is_finite() || !names.insert(m.name.as_str()) {
                return bad(format!("moderator `{}` is duplicated or has a non-finite effect", m.name));
            }
        }
        self.schema().validate()
    }

    pub fn study_sizes(&self) -> Vec<usize> {
        match &self.trials_per_study {
            TrialsPerStudy::Constant(c) => vec![*c; self.h],
            TrialsPerStudy::List(l) => l.clone(),
        }
    }

    /// Feature schema of the generated datasets.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            entries: self
                .moderators
                .iter()
                .map(|m| match m.kind {
                    ModeratorKind::Numeric => FeatureSpec::numeric(m.name.clone(), 1.0),
                    ModeratorKind::Binary => FeatureSpec::categorical(m.name.clone(), "no"),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    pub clamped: usize,
    pub warnings: Vec<String>,
}

fn draw_moderator(rng: &mut Xoshiro256, spec: &ModeratorSpec) -> (FeatureValue, f64) {
    match spec.kind {
        ModeratorKind::Numeric => {
            let x = rng.normal();
            (FeatureValue::Numeric(x), spec.effect * x)
        }
        ModeratorKind::Binary => {
            if rng.uniform() < 0.5 {
                (FeatureValue::Category("yes".into()), spec.effect)
            } else {
                (FeatureValue::Category("no".into()), 0.0)
            }
        }
    }
}

/// Draw an observed count for a trial with true effect `theta`.
/// Returns `(k, clamped)`.
pub(crate) fn draw_count(rng: &mut Xoshiro256, mode: SimMode, theta: f64, n: u64) -> Result<(u64, bool)> {
    let nf = n as f64;
    match mode {
        SimMode::Gaussian => {
            let observed = theta + rng.normal() * (1.0 / (4.0 * nf + 2.0)).sqrt();
            let clamped = !(0.0..=FRAC_PI_2).contains(&observed);
            let p = ft_inverse_clamped(observed, nf)?;
            Ok(((p * nf).round() as u64, clamped))
        }
        SimMode::Binomial => {
            let clamped = !(0.0..=FRAC_PI_2).contains(&theta);
            let p = ft_inverse_clamped(theta, nf)?;
            let k = Binomial::new(n, p)
                .map_err(|e| Error::Numerical(format!("binomial({n}, {p}): {e}")))?
                .sample(rng);
            Ok((k, clamped))
        }
    }
}

fn study_label(j: usize, h: usize) -> String {
    let width = h.to_string().len();
    format!("S{:0width$}", j + 1)
}

/// Generate replicate `replicate` of `config`. Every draw comes from a stream
/// keyed by `(replicate, study, trial)`, so replicates are independent of
/// each other and of evaluation order.
pub fn generate_replicate(config: &SimConfig, replicate: u64) -> Result<Simulation> {
    config.validate()?;
    let sizes = config.study_sizes();
    let sd_xi = config.sigma2_xi.sqrt();
    let sd_zeta = config.sigma2_zeta.sqrt();
    let mut trials = Vec::with_capacity(sizes.iter().sum());
    let mut clamped = 0;

    for (j, &size) in sizes.iter().enumerate() {
        let study_id = study_label(j, config.h);
        let mut srng = Xoshiro256::stream(config.seed, &[replicate, j as u64, STUDY_STREAM]);
        let xi = sd_xi * srng.normal();
        let mut study_features = BTreeMap::new();
        let mut study_shift = 0.0;
        for m in config.moderators.iter().filter(|m| m.level == ModeratorLevel::Study) {
            let (value, shift) = draw_moderator(&mut srng, m);
            study_features.insert(m.name.clone(), value);
            study_shift += shift;
        }
        for i in 0..size {
            let mut trng = Xoshiro256::stream(config.seed, &[replicate, j as u64, i as u64]);
            let n = trng.between(config.n_range.0, config.n_range.1);
            let zeta = sd_zeta * trng.normal();
            let mut features = study_features.clone();
            let mut shift = study_shift;
            for m in config.moderators.iter().filter(|m| m.level == ModeratorLevel::Trial) {
                let (value, s) = draw_moderator(&mut trng, m);
                features.insert(m.name.clone(), value);
                shift += s;
            }
            let theta = config.mu + shift + xi + zeta;
            let (k, was_clamped) = draw_count(&mut trng, config.mode, theta, n)?;
            clamped += usize::from(was_clamped);
            trials.push(TrialRecord {
                study_id: study_id.clone(),
                trial_id: format!("{study_id}.{}", i + 1),
                k,
                n,
                features,
            });
        }
    }

    let mut warnings = Vec::new();
    let rate = clamped as f64 / trials.len() as f64;
    if rate > CLAMP_WARN_RATE {
        let msg = format!("{:.1}% of effects were clamped into [0, pi/2]", 100.0 * rate);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let dataset = Dataset::new(trials, config.schema())?;
    Ok(Simulation { dataset, clamped, warnings })
}

pub fn generate(config: &SimConfig) -> Result<Simulation> {
    generate_replicate(config, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit {
    pub replicate: u64,
    pub mu_hat: f64,
    pub mu_se: f64,
    pub sigma2_xi: f64,
    pub sigma2_zeta: f64,
    pub covered: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverySummary {
    pub replications: usize,
    pub truth_mu: f64,
    pub truth_sigma2_xi: f64,
    pub truth_sigma2_zeta: f64,
    pub mean_mu: f64,
    pub mean_sigma2_xi: f64,
    pub mean_sigma2_zeta: f64,
    /// Relative bias `mean/truth - 1`, or the absolute mean when truth is 0.
    pub bias_sigma2_xi: f64,
    pub bias_sigma2_zeta: f64,
    pub coverage_mu: f64,
    pub nonconverged: usize,
    pub fits: Vec<ReplicateFit>,
}

fn relative_bias(mean: f64, truth: f64) -> f64 {
    if truth > 0.0 {
        mean / truth - 1.0
    } else {
        mean
    }
}

/// Fit `replications` independent datasets and summarize how well the
/// engine recovers the generating parameters. The intercept of the fitted
/// model (all configured moderators included) is compared with `mu`.
pub fn recovery_experiment(config: &SimConfig, replications: usize, options: &FitOptions) -> Result<RecoverySummary> {
    if replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    let features: Vec<&str> = config.moderators.iter().map(|m| m.name.as_str()).collect();
    let fits: Vec<ReplicateFit> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| -> Result<ReplicateFit> {
            let sim = generate_replicate(config, rep)?;
            let design = encode_design(&sim.dataset, &features)?;
            let problem = MetaProblem::from_dataset(&sim.dataset, &design)?;
            let fit = fit_model(&problem, options)?;
            let (mu_hat, mu_se) = (fit.beta[0], fit.se(0));
            let half = fit.critical_value(0.95) * mu_se;
            Ok(ReplicateFit {
                replicate: rep,
                mu_hat,
                mu_se,
                sigma2_xi: fit.varcomps.sigma2_xi,
                sigma2_zeta: fit.varcomps.sigma2_zeta,
                covered: (mu_hat - config.mu).abs() <= half,
                converged: fit.converged,
            })
        })
        .collect::<Result<_>>()?;

    let r = fits.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateFit) -> f64| fits.iter().map(f).sum::<f64>() / r;
    let mean_sigma2_xi = mean(&|x| x.sigma2_xi);
    let mean_sigma2_zeta = mean(&|x| x.sigma2_zeta);
    Ok(RecoverySummary {
        replications,
        truth_mu: config.mu,
        truth_sigma2_xi: config.sigma2_xi,
        truth_sigma2_zeta: config.sigma2_zeta,
        mean_mu: mean(&|x| x.mu_hat),
        mean_sigma2_xi,
        mean_sigma2_zeta,
        bias_sigma2_xi: relative_bias(mean_sigma2_xi, config.sigma2_xi),
        bias_sigma2_zeta: relative_bias(mean_sigma2_zeta, config.sigma2_zeta),
        coverage_mu: fits.iter().filter(|x| x.covered).count() as f64 / r,
        nonconverged: fits.iter().filter(|x| !x.converged).count(),
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::ft_inverse;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            h: 6,
            trials_per_study: TrialsPerStudy::Constant(4),
            mu: 1.0,
            sigma2_xi: 0.01,
            sigma2_zeta: 0.005,
            n_range: (50, 400),
            mode: SimMode::Gaussian,
            seed,
            moderators: vec![],
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a.dataset.to_csv(), b.dataset.to_csv());
        assert_ne!(a.dataset.to_csv(), generate(&small(6)).unwrap().dataset.to_csv());
    }

    #[test]
    fn degenerate_noise_gives_constant_accuracy() {
        let cfg = SimConfig { sigma2_xi: 0.0, sigma2_zeta: 0.0, n_range: (1_000_000, 1_000_000), ..small(1) };
        let target = ft_inverse(1.0, 1e6).unwrap();
        for t in generate(&cfg).unwrap().dataset.trials() {
            assert!((t.proportion() - target).abs() < 5e-3);
        }
    }

    #[test]
    fn binomial_counts_in_support() {
        let cfg = SimConfig { mode: SimMode::Binomial, mu: 1.5, sigma2_xi: 0.2, n_range: (1, 30), ..small(9) };
        for t in generate(&cfg).unwrap().dataset.trials() {
            assert!(t.k <= t.n);
        }
    }

    #[test]
    fn binomial_concentrates_for_huge_n() {
        let cfg = SimConfig {
            mode: SimMode::Binomial,
            sigma2_xi: 0.0,
            sigma2_zeta: 0.0,
            n_range: (1_000_000, 1_000_000),
            ..small(2)
        };
        let target = ft_inverse(1.0, 1e6).unwrap();
        for t in generate(&cfg).unwrap().dataset.trials() {
            assert!((t.proportion() - target).abs() < 1e-2);
        }
    }

    #[test]
    fn between_study_draws_have_the_right_variance() {
        let cfg = SimConfig { seed: 77, sigma2_xi: 0.04, ..small(77) };
        let h = 10_000u64;
        let draws: Vec<f64> = (0..h)
            .map(|j| cfg.sigma2_xi.sqrt() * Xoshiro256::stream(cfg.seed, &[0, j, STUDY_STREAM]).normal())
            .collect();
        let mean = draws.iter().sum::<f64>() / h as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (h - 1) as f64;
        assert!((var / 0.04 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn clamp_warning() {
        let cfg = SimConfig { mu: 1.55, sigma2_xi: 0.05, n_range: (10, 20), ..small(3) };
        let sim = generate(&cfg).unwrap();
        assert!(sim.clamped > 0);
        assert_eq!(sim.warnings.len(), 1);
    }

    #[test]
    fn config_validation_and_toml() {
        let cfg = SimConfig {
            moderators: vec![ModeratorSpec { name: "deep".into(), effect: 0.1, kind: ModeratorKind::Binary, level: ModeratorLevel::Trial }],
            ..small(4)
        };
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(SimConfig { h: 0, ..small(1) }.validate().is_err());
        assert!(SimConfig { n_range: (0, 5), ..small(1) }.validate().is_err());
        assert!(SimConfig { trials_per_study: TrialsPerStudy::List(vec![1, 2]), ..small(1) }.validate().is_err());
    }

    #[test]
    fn single_replication_summary_is_that_fit() {
        let s = recovery_experiment(&small(8), 1, &FitOptions::default()).unwrap();
        let f = &s.fits[0];
        assert_eq!(s.mean_mu, f.mu_hat);
        assert_eq!(s.mean_sigma2_xi, f.sigma2_xi);
        assert_eq!(s.coverage_mu, if f.covered { 1.0 } else { 0.0 });
    }

    #[test]
    fn zero_truth_concentrates_near_floor() {
        let cfg = SimConfig { sigma2_xi: 0.0, sigma2_zeta: 0.0, n_range: (100_000, 200_000), ..small(12) };
        let s = recovery_experiment(&cfg, 10, &FitOptions::default()).unwrap();
        assert!(s.mean_sigma2_xi < 1e-5 && s.mean_sigma2_zeta < 1e-5, "{s:?}");
    }
}
