//! The `tvcast` command line: `simulate`, `fit`, `forecast` and `report`.
//!
//! Every command writes its outputs into one directory and finishes with a
//! `manifest_<command>.json` listing the configuration, input and output
//! digests. Exit codes: 0 success (including a non-converged fit), 2 input
//! or validation errors, 3 numerical failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{convergence_report, summarize, summary_to_csv, ConvergenceReport, DEFAULT_RHAT_THRESHOLD};
use crate::draws::DrawStore;
use crate::error::{Error, Result};
use crate::forecast::{evaluate, export_plot_data, forecast_states, predict_outcomes, Metrics, Truth};
use crate::io::{
    dataset_to_csv, fmt_f64, read_json, read_observations, read_truth_csv, sha256_file, truth_to_csv,
    write_json, write_text,
};
use crate::model::{split_by_time, validate_dataset, ModelConfig, OutcomeKind};
use crate::sampler::{derive_seed, run, run_binary, Parallelism};
use crate::simulate::{generate, load_series, Scheme, SeriesSpec, SimParams};

const FORECAST_STREAM: u64 = 0xF04E_CA57;

#[derive(Debug, Parser)]
#[command(name = "tvcast", version, about = "Bayesian regression with time-varying coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the model and write draws, summaries and convergence diagnostics.
    Fit(FitArgs),
    /// Forecast held-out time points from a fit and score the predictions.
    Forecast(ForecastArgs),
    /// Verify a run directory and merge its results into one report.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// `t,value` series file; the bundled Nile series when omitted.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long, default_value = "continuous")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 5)]
    pub n_per_t: usize,
    #[arg(long, default_value_t = 5.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 30.0)]
    pub coef1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub coef2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x1_sd: f64,
    #[arg(long, default_value_t = 20.0)]
    pub x2_sd: f64,
    #[arg(long, default_value_t = 900.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutcomeArg {
    Continuous,
    Binary,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// Observation file with header `t,id,y,x1,..,xP`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub outcome: Option<OutcomeArg>,
    /// Fit on `t <= T`; later rows are written to `test.csv`.
    #[arg(long)]
    pub train_through: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub keep: Option<usize>,
    #[arg(long, value_enum)]
    pub trend: Option<Switch>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON model configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RHAT_THRESHOLD)]
    pub rhat_threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ForecastArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Held-out rows; `<run-dir>/test.csv` when omitted.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Steps past the last fitted time point; the last test time when omitted.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// `t,p,beta_true` file from `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
}

/// Self-description of one command's run. Output paths are relative to the
/// manifest's directory. `timing` is the only non-deterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timing: Timing,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Collects inputs and outputs while a command runs, then writes the
/// manifest.
struct Recorder {
    dir: PathBuf,
    started: Instant,
    started_unix: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Recorder {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            started_unix: unix_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn output_path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn output(&mut self, name: &str) -> Result<()> {
        let digest = sha256_file(&self.dir.join(name))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: digest,
        });
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.output_path(name), text)?;
        self.output(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.output_path(name), value)?;
        self.output(name)
    }

    fn finish(self, command: &str, seed: u64, config: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: crate::VERSION.to_string(),
            seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            timing: Timing {
                started_unix: self.started_unix,
                finished_unix: unix_now(),
                elapsed_seconds: self.started.elapsed().as_secs_f64(),
            },
        };
        let path = self.dir.join(manifest_name(command));
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let series = match &args.series {
        Some(path) => load_series(path)?,
        None => SeriesSpec::nile(),
    };
    let params = SimParams {
        n_per_t: args.n_per_t,
        coef1: args.coef1,
        coef2: args.coef2,
        noise_sd: args.noise_sd,
        x1_sd: args.x1_sd,
        x2_sd: args.x2_sd,
        threshold: args.threshold,
    };
    let (dataset, truth) = generate(args.scheme, &series, &params, args.seed)?;
    let mut rec = Recorder::new(&args.out_dir)?;
    if let Some(path) = &args.series {
        rec.input(path)?;
    }
    rec.text("data.csv", &dataset_to_csv(&dataset))?;
    rec.text("truth.csv", &truth_to_csv(&truth.rows()))?;
    let config = serde_json::json!({
        "series": series.label,
        "scheme": args.scheme.to_string(),
        "n_per_t": params.n_per_t,
        "noise_sd": params.noise_sd,
        "coef1": params.coef1,
        "coef2": params.coef2,
        "x1_sd": params.x1_sd,
        "x2_sd": params.x2_sd,
        "threshold": params.threshold,
        "n_times": series.len(),
        "n_rows": dataset.len(),
    });
    rec.finish("simulate", args.seed, config)?;
    println!(
        "simulated {} rows over {} time points ({}) into {}",
        dataset.len(),
        series.len(),
        args.scheme,
        args.out_dir.display()
    );
    Ok(())
}

/// What `forecast` needs to know about a fit besides the draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub model: ModelConfig,
    pub t_train: usize,
    pub n_times: usize,
    pub n_predictors: usize,
    pub has_intercept: bool,
    pub n_rows_train: usize,
    pub n_rows_test: usize,
    pub rhat_threshold: f64,
}

fn resolve_config(args: &FitArgs) -> Result<ModelConfig> {
    let mut config: ModelConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => ModelConfig::default(),
    };
    if let Some(o) = args.outcome {
        config.outcome_kind = match o {
            OutcomeArg::Continuous => OutcomeKind::Continuous,
            OutcomeArg::Binary => OutcomeKind::Binary,
        };
    }
    if let Some(v) = args.chains {
        config.n_chains = v;
    }
    if let Some(v) = args.warmup {
        config.n_warmup = v;
    }
    if let Some(v) = args.keep {
        config.n_keep = v;
    }
    if let Some(v) = args.trend {
        config.include_trend = v == Switch::On;
    }
    if let Some(v) = args.seed {
        config.master_seed = v;
    }
    config.validate()?;
    Ok(config)
}

fn accept_rates_csv(store: &DrawStore) -> Option<String> {
    let mut s = String::from("chain,t,accept_rate\n");
    for (c, chain) in store.chains().iter().enumerate() {
        for (i, r) in chain.accept_rates.as_ref()?.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", c + 1, i + 1, fmt_f64(*r)));
        }
    }
    Some(s)
}

pub fn cmd_fit(args: &FitArgs) -> Result<ConvergenceReport> {
    let config = resolve_config(args)?;
    let raw = read_observations(&args.data)?;
    let full = validate_dataset(&raw, &config)?;
    let (train, test) = match args.train_through {
        Some(t) if t < full.n_times() => {
            let (a, b) = split_by_time(&full, t)?;
            (a, Some(b))
        }
        Some(t) if t > full.n_times() || t == 0 => {
            return Err(Error::SplitOutOfRange { t_train: t, max: full.n_times() });
        }
        _ => (full.clone(), None),
    };
    let parallelism = Parallelism::from_env();
    let store = match config.outcome_kind {
        OutcomeKind::Continuous => run(&train, &config, parallelism)?,
        OutcomeKind::Binary => run_binary(&train, &config, parallelism)?,
    };
    let rows = summarize(&store, config.interval_mass)?;
    let report = convergence_report(&rows, args.rhat_threshold);

    let mut rec = Recorder::new(&args.out_dir)?;
    rec.input(&args.data)?;
    if let Some(path) = &args.config {
        rec.input(path)?;
    }
    store.write_csv(&rec.output_path("draws.csv"))?;
    rec.output("draws.csv")?;
    rec.text("summary.csv", &summary_to_csv(&rows))?;
    rec.json("convergence.json", &report)?;
    if let Some(text) = accept_rates_csv(&store) {
        rec.text("accept_rates.csv", &text)?;
    }
    if let Some(test) = &test {
        rec.text("test.csv", &dataset_to_csv(test))?;
    }
    let info = FitInfo {
        model: config.clone(),
        t_train: train.n_times(),
        n_times: full.n_times(),
        n_predictors: train.n_predictors(),
        has_intercept: train.has_intercept(),
        n_rows_train: train.len(),
        n_rows_test: test.as_ref().map_or(0, |d| d.len()),
        rhat_threshold: args.rhat_threshold,
    };
    rec.finish("fit", config.master_seed, json_value(&info))?;
    println!(
        "fit {} draws per parameter over t=1..{}: {}",
        store.n_draws(),
        train.n_times(),
        report.verdict
    );
    Ok(report)
}

fn load_fit_info(run_dir: &Path) -> Result<FitInfo> {
    let manifest: RunManifest = read_json(&run_dir.join(manifest_name("fit")))?;
    serde_json::from_value(manifest.config).map_err(|e| Error::json(run_dir.join(manifest_name("fit")), e))
}

pub fn cmd_forecast(args: &ForecastArgs) -> Result<Metrics> {
    let info = load_fit_info(&args.run_dir)?;
    let draws_path = args.run_dir.join("draws.csv");
    let store = DrawStore::read_csv(&draws_path)?;
    if store.layout().n_times != info.t_train || store.layout().n_predictors != info.n_predictors {
        return Err(Error::Integrity {
            path: draws_path,
            detail: "draw dimensions do not match the fit manifest".into(),
        });
    }
    let test_path = args.test.clone().unwrap_or_else(|| args.run_dir.join("test.csv"));
    let raw = read_observations(&test_path)?;
    let test = validate_dataset(&raw, &info.model)?;
    let last_test = test.observations().iter().map(|o| o.t).max().unwrap_or(0);
    let horizon = match args.horizon {
        Some(h) => h,
        None => last_test.saturating_sub(info.t_train),
    };
    if horizon == 0 {
        return Err(Error::Forecast("horizon must be >= 1".into()));
    }
    let truth = match &args.truth {
        Some(path) => Some(Truth::from_rows(&read_truth_csv(path)?)?),
        None => None,
    };
    let seed = args
        .seed
        .unwrap_or_else(|| derive_seed(info.model.master_seed, FORECAST_STREAM));
    let states = forecast_states(&store, horizon, seed)?;
    let result = predict_outcomes(&states, &test, info.model.outcome_kind, info.model.interval_mass, seed)?;
    let summary = summarize(&store, info.model.interval_mass)?;
    let metrics = evaluate(&result, &test, truth.as_ref(), Some(&summary))?;

    let mut rec = Recorder::new(&args.run_dir)?;
    rec.input(&draws_path)?;
    rec.input(&test_path)?;
    if let Some(path) = &args.truth {
        rec.input(path)?;
    }
    let files = export_plot_data(
        &summary,
        &result,
        truth.as_ref(),
        info.n_predictors,
        info.has_intercept,
        &args.run_dir,
    )?;
    for path in [&files.smoothed, &files.coefficients, &files.predictions] {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        rec.output(&name)?;
    }
    rec.json("metrics.json", &metrics)?;
    let config = serde_json::json!({ "horizon": horizon, "t_train": info.t_train });
    rec.finish("forecast", seed, config)?;
    println!(
        "forecast {} test rows over {horizon} steps: coverage {:.3}, rmse {}",
        metrics.n_test,
        metrics.coverage,
        fmt_f64(metrics.rmse)
    );
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub fit: FitInfo,
    pub convergence: ConvergenceReport,
    /// Absent when `forecast` has not been run on the directory.
    pub metrics: Option<Metrics>,
    /// Files whose digests were checked, by manifest.
    pub verified: BTreeMap<String, usize>,
}

/// Checks every output listed in `manifest_<command>.json` against its
/// digest. Returns the number of files checked, or `None` without manifest.
fn verify_manifest(run_dir: &Path, command: &str) -> Result<Option<usize>> {
    let path = run_dir.join(manifest_name(command));
    if !path.exists() {
        return Ok(None);
    }
    let manifest: RunManifest = read_json(&path)?;
    for out in &manifest.outputs {
        let file = run_dir.join(&out.path);
        if !file.exists() {
            return Err(Error::Integrity {
                path: file,
                detail: "listed in the manifest but missing".into(),
            });
        }
        let digest = sha256_file(&file)?;
        if digest != out.sha256 {
            return Err(Error::Integrity {
                path: file,
                detail: format!("sha256 {digest} differs from manifest {}", out.sha256),
            });
        }
    }
    Ok(Some(manifest.outputs.len()))
}

pub fn report_text(report: &Report) -> String {
    let c = &report.convergence;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("tvcast {} run report\n\n[fit]\n", report.version);
    s.push_str(&format!(
        "outcome: {}\ntrend: {}\nchains x kept draws: {} x {}\nfitted time points: 1..{}\ntraining rows: {}\n\n",
        report.fit.model.outcome_kind,
        if report.fit.model.include_trend { "on" } else { "off" },
        report.fit.model.n_chains,
        report.fit.model.n_keep,
        report.fit.t_train,
        report.fit.n_rows_train,
    ));
    s.push_str(&format!(
        "[convergence]\nconverged: {}\nverdict: {}\nmax R-hat: {}\nmin ESS: {}\nparameters above R-hat {}: {}\ndegenerate parameters: {}\n",
        c.converged,
        c.verdict,
        opt(c.max_rhat),
        opt(c.min_ess),
        c.rhat_threshold,
        c.not_converged.len(),
        c.degenerate.len(),
    ));
    if let Some((lo, hi)) = c.accept_rate_range {
        s.push_str(&format!("acceptance rate range: {lo:.3} .. {hi:.3}\n"));
    }
    s.push('\n');
    match &report.metrics {
        None => s.push_str("[forecast]\nforecast not run\n"),
        Some(m) => {
            s.push_str(&format!(
                "[forecast]\ntest rows: {}\ncoverage at {}: {:.4}\nRMSE: {:.4}\nmean signed error (predicted - observed): {:.4}\nmean predictive sd: {:.4}\n",
                m.n_test, m.interval_mass, m.coverage, m.rmse, m.mean_signed_error, m.mean_predictive_sd
            ));
            for cc in &m.coef_coverage {
                s.push_str(&format!(
                    "coefficient {} interval coverage over fitted t: {:.4}\n",
                    cc.p, cc.fraction
                ));
            }
            if let Some(r) = m.level_correlation {
                s.push_str(&format!("level vs driving series correlation: {r:.4}\n"));
            }
        }
    }
    s
}

pub fn cmd_report(args: &ReportArgs) -> Result<Report> {
    let dir = &args.run_dir;
    let mut verified = BTreeMap::new();
    for command in ["fit", "forecast"] {
        if let Some(n) = verify_manifest(dir, command)? {
            verified.insert(command.to_string(), n);
        }
    }
    if !verified.contains_key("fit") {
        return Err(Error::Input(format!(
            "{} has no {}",
            dir.display(),
            manifest_name("fit")
        )));
    }
    let fit = load_fit_info(dir)?;
    let convergence: ConvergenceReport = read_json(&dir.join("convergence.json"))?;
    let metrics = if verified.contains_key("forecast") {
        Some(read_json(&dir.join("metrics.json"))?)
    } else {
        None
    };
    let report = Report {
        version: crate::VERSION.to_string(),
        fit,
        convergence,
        metrics,
        verified,
    };
    let mut rec = Recorder::new(dir)?;
    for command in report.verified.keys() {
        rec.input(&dir.join(manifest_name(command)))?;
    }
    rec.json("report.json", &report)?;
    let text = report_text(&report);
    rec.text("report.txt", &text)?;
    rec.finish("report", report.fit.model.master_seed, serde_json::json!({}))?;
    print!("{text}");
    Ok(report)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Forecast(a) => cmd_forecast(a).map(|_| ()),
        Command::Report(a) => cmd_report(a).map(|_| ()),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
