use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use metaprop::engine::{fixed_effect_residuals, linear_estimate, predict_study_effects, FitOptions, MetaProblem};
use metaprop::heterogeneity::{r_squared, HeterogeneityReport};
use metaprop::ingest::{encode_design, parse_dataset, Dataset, DesignMatrix, FeatureSchema};
use metaprop::report::{
    comparison_table, diagnostic_table, forest_plot, format_p, regression_table, AxisScale, ForestOptions,
    TableFormat,
};
use metaprop::selection::{criterion, five_model_protocol, CriterionKind, ResidualKind, SearchOptions, Strategy};
use metaprop::simulate::{generate_replicate, recovery_experiment, SimConfig};
use metaprop::transforms::transform_diagnostic;
use metaprop::{fit_model, FitResult, Method};

use crate::args::{Cli, Command, DataArgs, Format, ModelArgs, ResidualArg, ScaleArg, StrategyArg};
use crate::manifest::{strip_out_dir, InputFile, RunManifest};
use crate::Failure;

type CmdResult<T = ()> = Result<T, Failure>;

struct Run<'a> {
    cli: &'a Cli,
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run<'_> {
    fn read(&mut self, path: &Path) -> CmdResult<String> {
        let bytes = fs::read(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.push(InputFile::new(path, &bytes));
        String::from_utf8(bytes).map_err(|_| Failure::Input(format!("{} is not UTF-8", path.display())))
    }

    fn load(&mut self, args: &DataArgs) -> CmdResult<Dataset> {
        let schema_text = self.read(&args.schema)?;
        let schema = FeatureSchema::from_toml_str(&schema_text)
            .map_err(|e| Failure::Input(format!("{}: {e}", args.schema.display())))?;
        self.manifest.config = Some(args.schema.display().to_string());
        let csv = self.read(&args.data)?;
        parse_dataset(&csv, &schema).map_err(|e| Failure::Input(format!("{}: {e}", args.data.display())))
    }

    /// Write an artifact; relative names land in the output directory.
    fn write(&mut self, path: &Path, contents: &str) -> CmdResult {
        let target = if path.is_absolute() || path.parent().is_some_and(|p| !p.as_os_str().is_empty()) {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        };
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Failure::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&target, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", target.display())))?;
        self.manifest.outputs.push(target.display().to_string());
        Ok(())
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.manifest.settings.insert(key.to_string(), value.to_string());
    }

    fn emit(&self, text: &str, doc: &Value) {
        match self.cli.format {
            Format::Text => print!("{text}"),
            Format::Json => println!("{}", serde_json::to_string_pretty(doc).expect("serializable")),
        }
    }

    fn finish(mut self) -> CmdResult {
        let name = format!("manifest-{}.json", self.manifest.command);
        let path = self.out_dir.join(&name);
        self.manifest.outputs.sort();
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializable") + "\n";
        fs::create_dir_all(&self.out_dir)
            .and_then(|_| fs::write(&path, text))
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
    }
}

pub fn run(cli: &Cli, argv: &[String]) -> CmdResult {
    if let Command::Replay { manifest } = &cli.command {
        return replay(cli, manifest);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Failure::Input(format!("cannot start {} worker threads: {e}", cli.jobs)))?;
    let mut run = Run {
        cli,
        out_dir: cli.out_dir.clone(),
        manifest: RunManifest {
            command: cli.command.name().to_string(),
            args: strip_out_dir(argv),
            inputs: Vec::new(),
            config: None,
            seed: None,
            out_dir: cli.out_dir.display().to_string(),
            outputs: Vec::new(),
            settings: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        },
    };
    // A non-convergence failure still leaves its report and manifest behind.
    let outcome = pool.install(|| dispatch(&mut run));
    match outcome {
        Err(Failure::Input(_)) => outcome,
        _ => {
            run.finish()?;
            outcome
        }
    }
}

fn replay(cli: &Cli, path: &Path) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut argv = vec!["metaprop".to_string()];
    argv.extend(manifest.args.iter().cloned());
    argv.push("--out-dir".into());
    argv.push(cli.out_dir.display().to_string());
    let recorded = Cli::try_parse_from(&argv).map_err(|e| Failure::Input(format!("manifest arguments: {e}")))?;
    if matches!(recorded.command, Command::Replay { .. }) {
        return Err(Failure::Input("a manifest cannot replay another replay".into()));
    }
    run(&recorded, &argv[1..])
}

fn dispatch(run: &mut Run) -> CmdResult {
    let cli = run.cli;
    match &cli.command {
        Command::Fit { data, model, summary } => cmd_fit(run, data, model, (*summary).into()),
        Command::Regress { data, model, features } => cmd_regress(run, data, model, features),
        Command::Select { data, strategy, criterion_likelihood, rmse_residuals, features } => {
            let options = SearchOptions {
                strategy: match strategy {
                    StrategyArg::Exhaustive => Strategy::Exhaustive,
                    StrategyArg::Stepwise => Strategy::Stepwise,
                },
                fit: FitOptions::default(),
                criterion_method: (*criterion_likelihood).into(),
                residuals: match rmse_residuals {
                    ResidualArg::Fixed => ResidualKind::Fixed,
                    ResidualArg::Conditional => ResidualKind::Conditional,
                },
                features: None,
            };
            cmd_select(run, data, options, features)
        }
        Command::Forest { data, model, out, scale, summary, title } => {
            let options = ForestOptions {
                summary: (*summary).into(),
                scale: match scale {
                    ScaleArg::Proportion => AxisScale::Proportion,
                    ScaleArg::Transformed => AxisScale::Transformed,
                },
                level: 0.95,
                title: title.clone(),
            };
            cmd_forest(run, data, model, out.as_deref(), options)
        }
        Command::Diagnose { data } => cmd_diagnose(run, data),
        Command::Simulate { config, out, replicate, seed } => cmd_simulate(run, config, out.as_deref(), *replicate, *seed),
        Command::Recover { config, reps, model, seed } => cmd_recover(run, config, *reps, model, *seed),
        Command::Replay { .. } => unreachable!("handled before dispatch"),
    }
}

fn fit_options(model: &ModelArgs) -> FitOptions {
    FitOptions { method: model.method.into(), t_intervals: model.t_intervals, ..FitOptions::default() }
}

fn record_model(run: &mut Run, model: &ModelArgs) {
    run.set("method", Method::from(model.method));
    run.set("t_intervals", model.t_intervals);
}

fn parse_features(spec: &str, dataset: &Dataset) -> CmdResult<Vec<String>> {
    let schema = dataset.schema();
    if spec.trim() == "all" {
        return Ok(schema.names().map(str::to_string).collect());
    }
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if schema.get(name).is_none() {
            return Err(Failure::Input(format!("unknown feature `{name}`")));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

fn prepare(dataset: &Dataset, features: &[String]) -> CmdResult<(DesignMatrix, MetaProblem)> {
    let design = encode_design(dataset, features)?;
    let problem = MetaProblem::from_dataset(dataset, &design)?;
    Ok((design, problem))
}

fn convergence(fit: &FitResult) -> CmdResult {
    if fit.converged {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "variance components did not converge after {} evaluations",
            fit.n_evaluations
        )))
    }
}

#[derive(Serialize)]
struct FitSummary {
    method: Method,
    m: usize,
    h: usize,
    f: usize,
    loglik: f64,
    aic: f64,
    bic: f64,
    sigma2_xi: f64,
    sigma2_zeta: f64,
    converged: bool,
    n_evaluations: usize,
    warnings: Vec<String>,
}

fn summarize(fit: &FitResult, problem: &MetaProblem) -> FitSummary {
    let resid = fixed_effect_residuals(fit, problem);
    FitSummary {
        method: fit.method,
        m: fit.m,
        h: fit.h,
        f: fit.f,
        loglik: fit.loglik,
        aic: criterion(fit, &resid, CriterionKind::Aic),
        bic: criterion(fit, &resid, CriterionKind::Bic),
        sigma2_xi: fit.varcomps.sigma2_xi,
        sigma2_zeta: fit.varcomps.sigma2_zeta,
        converged: fit.converged,
        n_evaluations: fit.n_evaluations,
        warnings: fit.warnings.clone(),
    }
}

fn heterogeneity_text(s: &mut String, fit: &FitResult, het: &HeterogeneityReport) {
    let _ = writeln!(s, "sigma2_xi   = {:.6} (I2_xi   = {:.2})", fit.varcomps.sigma2_xi, het.i2_xi);
    let _ = writeln!(s, "sigma2_zeta = {:.6} (I2_zeta = {:.2})", fit.varcomps.sigma2_zeta, het.i2_zeta);
    let _ = writeln!(s, "sigma2_eps  = {:.6}", het.sigma2_eps);
    let _ = writeln!(s, "Q({}) = {:.2}, p {}", het.q_df, het.q, p_clause(het.q_pvalue));
}

fn p_clause(p: f64) -> String {
    let f = format_p(p);
    if f.starts_with('<') {
        f
    } else {
        format!("= {f}")
    }
}

fn cmd_fit(run: &mut Run, data: &DataArgs, model: &ModelArgs, summary: metaprop::engine::StudySummary) -> CmdResult {
    record_model(run, model);
    run.set("summary", format!("{summary:?}").to_lowercase());
    let dataset = run.load(data)?;
    let (_, problem) = prepare(&dataset, &[])?;
    let fit = fit_model(&problem, &fit_options(model))?;
    let het = HeterogeneityReport::compute(&fit, &problem)?;
    let pooled = linear_estimate(&fit, &[1.0], 0.95)?;
    let studies = predict_study_effects(&fit, &problem, summary);
    let info = summarize(&fit, &problem);

    let mut text = String::new();
    let _ = writeln!(
        text,
        "Three-level random-effects model ({}), m = {} trials in h = {} studies",
        fit.method, fit.m, fit.h
    );
    let _ = writeln!(
        text,
        "mu (double arcsine) = {:.4} (SE {:.4}), 95% CI [{:.4}; {:.4}]",
        pooled.mu, pooled.se, pooled.ci_low, pooled.ci_high
    );
    let _ = writeln!(
        text,
        "mu (proportion)     = {:.4} [{:.4}; {:.4}]",
        pooled.proportion, pooled.proportion_ci.0, pooled.proportion_ci.1
    );
    heterogeneity_text(&mut text, &fit, &het);
    let _ = writeln!(text, "logLik = {:.4}, AIC = {:.4}, BIC = {:.4}", info.loglik, info.aic, info.bic);
    for w in &fit.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    let doc = json!({
        "command": "fit",
        "fit": info,
        "pooled": pooled,
        "heterogeneity": het,
        "studies": studies,
    });
    run.write(Path::new("fit.json"), &(serde_json::to_string_pretty(&doc).expect("serializable") + "\n"))?;
    run.emit(&text, &doc);
    convergence(&fit)
}

fn cmd_regress(run: &mut Run, data: &DataArgs, model: &ModelArgs, features: &str) -> CmdResult {
    record_model(run, model);
    run.set("features", features);
    let dataset = run.load(data)?;
    let features = parse_features(features, &dataset)?;
    let options = fit_options(model);
    let (design, problem) = prepare(&dataset, &features)?;
    let fit = fit_model(&problem, &options)?;
    let (_, null_problem) = prepare(&dataset, &[])?;
    let null = fit_model(&null_problem, &options)?;
    let r2 = r_squared(&fit, &null)?;
    let het = HeterogeneityReport::compute(&fit, &problem)?;
    let pooled = linear_estimate(&fit, &design.column_means(), 0.95)?;
    let table = regression_table(&fit, &design, dataset.schema())?;
    let info = summarize(&fit, &problem);

    let markdown = table.render(TableFormat::Markdown);
    run.write(Path::new("regression.md"), &markdown)?;
    run.write(Path::new("regression.csv"), &table.render(TableFormat::Csv))?;

    let mut text = format!(
        "Meta-regression ({}), m = {}, h = {}, f = {}\n\n{markdown}\n",
        fit.method, fit.m, fit.h, fit.f
    );
    let fmt_r2 = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(text, "R2_xi = {}, R2_zeta = {}", fmt_r2(r2.xi), fmt_r2(r2.zeta));
    heterogeneity_text(&mut text, &fit, &het);
    let _ = writeln!(
        text,
        "mu at covariate means (proportion) = {:.4} [{:.4}; {:.4}]",
        pooled.proportion, pooled.proportion_ci.0, pooled.proportion_ci.1
    );
    let _ = writeln!(text, "logLik = {:.4}, AIC = {:.4}, BIC = {:.4}", info.loglik, info.aic, info.bic);
    let doc = json!({
        "command": "regress",
        "features": features,
        "fit": info,
        "coefficients": table,
        "r2": r2,
        "heterogeneity": het,
        "pooled_at_means": pooled,
    });
    run.write(Path::new("regression.json"), &(serde_json::to_string_pretty(&doc).expect("serializable") + "\n"))?;
    run.emit(&text, &doc);
    convergence(&fit)
}

fn cmd_select(run: &mut Run, data: &DataArgs, mut options: SearchOptions, features: &str) -> CmdResult {
    run.set("strategy", format!("{:?}", options.strategy).to_lowercase());
    run.set("criterion_likelihood", options.criterion_method);
    run.set("rmse_residuals", format!("{:?}", options.residuals).to_lowercase());
    run.set("features", features);
    let dataset = run.load(data)?;
    options.features = Some(parse_features(features, &dataset)?);
    let out = five_model_protocol(&dataset, &options)?;

    let markdown = comparison_table(&out.rows, TableFormat::Markdown);
    run.write(Path::new("comparison.md"), &markdown)?;
    run.write(Path::new("comparison.csv"), &comparison_table(&out.rows, TableFormat::Csv))?;
    let mut trail = String::new();
    for record in &out.trail {
        trail.push_str(&serde_json::to_string(record).expect("serializable"));
        trail.push('\n');
    }
    run.write(Path::new("trail.jsonl"), &trail)?;
    let mut tables = BTreeMap::new();
    for m in &out.models {
        let table = regression_table(&m.fit, &m.design, dataset.schema())?;
        let name = format!("regression_{}.md", m.name.to_lowercase());
        run.write(Path::new(&name), &table.render(TableFormat::Markdown))?;
        tables.insert(m.name.clone(), table);
    }

    let mut text = format!("Model comparison ({} subsets evaluated, rows ordered by AIC)\n\n{markdown}\n", out.trail.len());
    if options.criterion_method == Method::Reml {
        text.push_str(
            "AIC/BIC use REML likelihoods, which are not strictly comparable across fixed-effect structures; \
             see --criterion-likelihood ml.\n",
        );
    } else {
        text.push_str("AIC/BIC use ML likelihoods; variance components and R2 come from REML fits.\n");
    }
    for row in &out.rows {
        let _ = writeln!(text, "{}: {}", row.name, if row.features.is_empty() { "(none)".into() } else { row.features.join(", ") });
        if let Some(err) = &row.error {
            let _ = writeln!(text, "  failed: {err}");
        }
    }
    let skipped = out.trail.iter().filter(|r| r.skipped.is_some()).count();
    let nonconverged = out.trail.iter().filter(|r| r.skipped.is_none() && !r.converged).count();
    if skipped + nonconverged > 0 {
        let _ = writeln!(text, "{skipped} subsets skipped, {nonconverged} did not converge (see trail.jsonl)");
    }
    let doc = json!({
        "command": "select",
        "strategy": options.strategy,
        "criterion_likelihood": options.criterion_method,
        "rmse_residuals": options.residuals,
        "subsets_evaluated": out.trail.len(),
        "rows": out.rows,
        "coefficients": tables,
    });
    run.emit(&text, &doc);
    Ok(())
}

fn cmd_forest(
    run: &mut Run,
    data: &DataArgs,
    model: &ModelArgs,
    out: Option<&Path>,
    options: ForestOptions,
) -> CmdResult {
    record_model(run, model);
    run.set("scale", format!("{:?}", options.scale).to_lowercase());
    run.set("summary", format!("{:?}", options.summary).to_lowercase());
    let dataset = run.load(data)?;
    let (_, problem) = prepare(&dataset, &[])?;
    let fit = fit_model(&problem, &fit_options(model))?;
    let plot = forest_plot(&fit, &problem, &options)?;
    run.write(out.unwrap_or(Path::new("forest.svg")), &plot.svg)?;

    let mut text = String::from("| Study | Trials | Weight | Estimate [95% CI] |\n|---|---:|---:|---:|\n");
    for r in plot.rows.iter().chain([&plot.summary]) {
        let _ = writeln!(
            text,
            "| {} | {} | {:.1}% | {:.4} [{:.4}; {:.4}] |",
            r.study_id,
            r.trials,
            100.0 * r.weight,
            r.estimate,
            r.ci.0,
            r.ci.1
        );
    }
    let doc = json!({ "command": "forest", "scale": plot.scale, "rows": plot.rows, "summary": plot.summary });
    run.emit(&text, &doc);
    convergence(&fit)
}

fn cmd_diagnose(run: &mut Run, data: &DataArgs) -> CmdResult {
    let dataset = run.load(data)?;
    let rows = transform_diagnostic(&dataset)?;
    run.write(Path::new("diagnostics.csv"), &diagnostic_table(&rows, TableFormat::Csv))?;
    let doc = json!({ "command": "diagnose", "rows": rows });
    run.emit(&diagnostic_table(&rows, TableFormat::Markdown), &doc);
    Ok(())
}

fn load_config(run: &mut Run, path: &Path, seed: Option<u64>) -> CmdResult<SimConfig> {
    let text = run.read(path)?;
    run.manifest.config = Some(path.display().to_string());
    let mut config = SimConfig::from_toml_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    run.manifest.seed = Some(config.seed);
    Ok(config)
}

fn cmd_simulate(run: &mut Run, config: &Path, out: Option<&Path>, replicate: u64, seed: Option<u64>) -> CmdResult {
    let config = load_config(run, config, seed)?;
    run.set("replicate", replicate);
    let sim = generate_replicate(&config, replicate)?;
    let target = out.unwrap_or(Path::new("simulated.csv"));
    run.write(target, &sim.dataset.to_csv())?;
    let mut text = format!(
        "Simulated {} trials in {} studies (seed {}, replicate {replicate}); {} effects clamped\n",
        sim.dataset.m(),
        sim.dataset.h(),
        config.seed,
        sim.clamped
    );
    for w in &sim.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    let doc = json!({
        "command": "simulate",
        "seed": config.seed,
        "replicate": replicate,
        "m": sim.dataset.m(),
        "h": sim.dataset.h(),
        "clamped": sim.clamped,
        "warnings": sim.warnings,
    });
    run.emit(&text, &doc);
    Ok(())
}

fn cmd_recover(run: &mut Run, config: &Path, reps: usize, model: &ModelArgs, seed: Option<u64>) -> CmdResult {
    record_model(run, model);
    run.set("reps", reps);
    let config = load_config(run, config, seed)?;
    let summary = recovery_experiment(&config, reps, &fit_options(model))?;
    run.write(Path::new("recovery.json"), &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"))?;
    let mut text = format!("Recovery over {} replications (seed {})\n", summary.replications, config.seed);
    let _ = writeln!(text, "| Parameter | Truth | Mean estimate | Relative bias |\n|---|---:|---:|---:|");
    let _ = writeln!(text, "| mu | {:.6} | {:.6} | |", summary.truth_mu, summary.mean_mu);
    let _ = writeln!(
        text,
        "| sigma2_xi | {:.6} | {:.6} | {:+.3} |",
        summary.truth_sigma2_xi, summary.mean_sigma2_xi, summary.bias_sigma2_xi
    );
    let _ = writeln!(
        text,
        "| sigma2_zeta | {:.6} | {:.6} | {:+.3} |",
        summary.truth_sigma2_zeta, summary.mean_sigma2_zeta, summary.bias_sigma2_zeta
    );
    let _ = writeln!(text, "95% CI coverage of mu: {:.3}", summary.coverage_mu);
    let _ = writeln!(text, "non-converged fits: {}", summary.nonconverged);
    let mut doc = serde_json::to_value(&summary).expect("serializable");
    if let Value::Object(map) = &mut doc {
        map.remove("fits");
        map.insert("command".into(), json!("recover"));
    }
    run.emit(&text, &doc);
    if summary.nonconverged > 0 {
        log::warn!("{} replications did not converge", summary.nonconverged);
    }
    Ok(())
}
