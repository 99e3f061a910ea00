use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "metaprop", version, about = "Three-level meta-analysis of proportions")]
pub struct Cli {
    /// Output on stdout: human-readable text or a single JSON document.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,

    /// Directory for artifacts and the run manifest.
    #[arg(long, env = "METAPROP_OUT_DIR", default_value = ".", global = true)]
    pub out_dir: PathBuf,

    /// Worker threads for subset search and recovery runs (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    pub jobs: usize,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Reml,
    Ml,
}

impl From<MethodArg> for metaprop::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Reml => metaprop::Method::Reml,
            MethodArg::Ml => metaprop::Method::Ml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryArg {
    Blup,
    Pooled,
}

impl From<SummaryArg> for metaprop::engine::StudySummary {
    fn from(s: SummaryArg) -> Self {
        match s {
            SummaryArg::Blup => Self::Blup,
            SummaryArg::Pooled => Self::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Exhaustive,
    Stepwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResidualArg {
    Fixed,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Proportion,
    Transformed,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Trial-level CSV.
    pub data: PathBuf,

    /// Feature schema (TOML).
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Reml)]
    pub method: MethodArg,

    /// Student-t instead of normal quantiles for intervals and p-values.
    #[arg(long)]
    pub t_intervals: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Intercept-only three-level fit: pooled estimate and heterogeneity.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Per-study summary listed with the fit.
        #[arg(long, value_enum, default_value_t = SummaryArg::Blup)]
        summary: SummaryArg,
    },
    /// Meta-regression on selected features.
    Regress {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// `all` or a comma-separated list of feature names.
        #[arg(long, default_value = "all")]
        features: String,
    },
    /// Null, full, AIC-, BIC- and RMSE-optimal models with a comparison table.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = StrategyArg::Exhaustive)]
        strategy: StrategyArg,
        /// Likelihood behind AIC and BIC. Variance components always come
        /// from REML fits.
        #[arg(long, value_enum, default_value_t = MethodArg::Reml)]
        criterion_likelihood: MethodArg,
        /// Residuals used for RMSE.
        #[arg(long, value_enum, default_value_t = ResidualArg::Fixed)]
        rmse_residuals: ResidualArg,
        /// Candidate features: `all` or a comma-separated list.
        #[arg(long, default_value = "all")]
        features: String,
    },
    /// Forest plot (SVG) of per-study effects and the pooled estimate.
    Forest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// SVG path; defaults to `forest.svg` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScaleArg::Proportion)]
        scale: ScaleArg,
        #[arg(long, value_enum, default_value_t = SummaryArg::Blup)]
        summary: SummaryArg,
        #[arg(long)]
        title: Option<String>,
    },
    /// Shapiro–Wilk normality of the accuracies under each transform.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Draw a synthetic dataset from a simulation config.
    Simulate {
        /// Simulation config (TOML).
        config: PathBuf,
        /// CSV path; defaults to `simulated.csv` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replicate index (selects independent random streams).
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit many simulated replicates and summarize parameter recovery.
    Recover {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit { .. } => "fit",
            Command::Regress { .. } => "regress",
            Command::Select { .. } => "select",
            Command::Forest { .. } => "forest",
            Command::Diagnose { .. } => "diagnose",
            Command::Simulate { .. } => "simulate",
            Command::Recover { .. } => "recover",
            Command::Replay { .. } => "replay",
        }
    }
}
