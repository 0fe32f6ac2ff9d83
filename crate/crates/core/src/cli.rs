//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::averaging::{candidate_specs, fit_candidates, jackknife_weights, JackknifeOptions, SplineOptions};
use crate::data::{dataset_from_table, CsvOptions, Dataset, Table};
use crate::error::{QpmaError, Result};
use crate::evaluation::{crossing_diagnostic, QuantilePredictor};
use crate::model_file::{Diagnostics, ModelFile};
use crate::simulation::{run_benchmark, BenchmarkOptions, BenchmarkReport, Method, Scenario};
use crate::tau_basis::{check_tau, tau_grid};

#[derive(Debug, Parser)]
#[command(name = "qpma", version, about = "Jackknife model averaging of partially linear quantile models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit all candidates and choose leave-one-out weights.
    Fit(FitArgs),
    /// Predict conditional quantiles from a model file.
    Predict(PredictArgs),
    /// Recompute leave-one-out weights for the candidates of a model file.
    Weights(WeightsArgs),
    /// Run one simulation scenario.
    Simulate(SimulateArgs),
    /// Run a sweep of simulation scenarios.
    Benchmark(SimulateArgs),
}

/// Settings shared by fitting commands. Unset values fall back to the file
/// (for simulations) and then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// tau basis: gaussian, cubic-poly, mixed or custom:f1,f2,...
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long)]
    pub spline_order: Option<usize>,
    /// Number of interior knots (default floor(n^(1/5))).
    #[arg(long)]
    pub knots: Option<usize>,
    /// Size m of the tau grid used in the fitting integral (default n).
    #[arg(long)]
    pub tau_grid: Option<usize>,
    /// Keep every j-th point of the cross-validation tau grid.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Iteration cap for warm-started leave-one-out refits.
    #[arg(long)]
    pub loo_max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Columns to treat as discrete (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub discrete: Vec<String>,
    /// Columns to treat as continuous (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Quantile levels (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub taus: Vec<f64>,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training data the model was fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub loo_max_iters: Option<usize>,
    /// Updated model file (the weights are printed either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file.
    pub scenario: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Methods to compare (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Output directory for the tables.
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional `[run]` table of a scenario file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub methods: Option<Vec<String>>,
    pub basis: Option<String>,
    pub spline_order: Option<usize>,
    pub knots: Option<usize>,
    pub tau_grid: Option<usize>,
    pub thin: Option<usize>,
    pub loo_max_iters: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    scenario: Scenario,
    #[serde(default)]
    run: RunSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    scenario: Vec<Scenario>,
    #[serde(default)]
    run: RunSettings,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| QpmaError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| QpmaError::Config(format!("{}: {e}", path.display())))
}

impl ModelArgs {
    fn merged(&self, file: &RunSettings) -> ModelArgs {
        ModelArgs {
            basis: self.basis.clone().or_else(|| file.basis.clone()),
            spline_order: self.spline_order.or(file.spline_order),
            knots: self.knots.or(file.knots),
            tau_grid: self.tau_grid.or(file.tau_grid),
            thin: self.thin.or(file.thin),
            loo_max_iters: self.loo_max_iters.or(file.loo_max_iters),
        }
    }

    fn jackknife(&self) -> Result<JackknifeOptions> {
        let mut opts = JackknifeOptions::default();
        if let Some(b) = &self.basis {
            opts.basis = b.parse()?;
        }
        opts.spline = SplineOptions { order: self.spline_order.unwrap_or(2), n_interior: self.knots };
        if opts.spline.order < 2 {
            return Err(QpmaError::Config("--spline-order must be >= 2".into()));
        }
        opts.fit.grid_size = self.tau_grid;
        if let Some(t) = self.thin {
            if t == 0 {
                return Err(QpmaError::Config("--thin must be >= 1".into()));
            }
            opts.cv_thin = t;
        }
        if let Some(it) = self.loo_max_iters {
            if it == 0 {
                return Err(QpmaError::Config("--loo-max-iters must be >= 1".into()));
            }
            opts.loo_max_iters = it;
        }
        opts.fit.validate()?;
        Ok(opts)
    }
}

fn describe_jackknife(j: &JackknifeOptions) -> BTreeMap<String, String> {
    BenchmarkOptions { methods: vec![Method::Jqplma], jackknife: j.clone() }
        .describe()
        .into_iter()
        .filter(|(k, _)| k != "methods")
        .collect()
}

fn header_lines(pairs: impl IntoIterator<Item = (String, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

fn load_training(args: &DataArgs) -> Result<Dataset> {
    let table = Table::read(&args.data)?;
    let opts = CsvOptions {
        response: args.response.clone(),
        discrete: args.discrete.clone(),
        continuous: args.continuous.clone(),
    };
    dataset_from_table(&table, &opts)
}

/// Rows of `table` rearranged to the model's column order. The response
/// column may be present and is then ignored.
fn align_columns(table: &Table, file: &ModelFile) -> Result<Dataset> {
    let wanted = file.column_names();
    let missing: Vec<&str> = wanted.iter().copied().filter(|n| table.index_of(n).is_none()).collect();
    let extra: Vec<&str> = table
        .headers
        .iter()
        .map(String::as_str)
        .filter(|h| *h != file.response && !wanted.contains(h))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(QpmaError::Data(format!(
            "column mismatch with model: missing [{}], extra [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let idx: Vec<usize> = wanted.iter().map(|n| table.index_of(n).expect("checked")).collect();
    let n = table.n_rows();
    let mut x = Vec::with_capacity(n * idx.len());
    for i in 0..n {
        for &j in &idx {
            x.push(table.columns[j][i]);
        }
    }
    let y = match table.index_of(&file.response) {
        Some(j) => table.columns[j].clone(),
        None => vec![0.0; n],
    };
    let p = file.n_continuous();
    Dataset::with_names(y, x, wanted.iter().map(|s| s.to_string()).collect(), p, idx.len() - p)
}

fn weights_summary(file: &ModelFile) -> String {
    let mut out = String::from("candidate,nonparametric,weight\n");
    for (s, (c, w)) in file.candidates.iter().zip(file.weights.as_slice()).enumerate() {
        let _ = writeln!(out, "{},{},{}", s + 1, file.columns[c.s()].name, w);
    }
    out
}

pub fn cmd_fit(args: &FitArgs) -> Result<String> {
    let data = load_training(&args.data)?;
    data.validate_for_fit()?;
    let opts = args.model.jackknife()?;
    let specs = candidate_specs(&data, &opts.spline)?;
    let fits = fit_candidates(&data, &specs, &opts.basis, &opts.fit)?;
    let converged: Vec<bool> = fits.iter().map(|(_, r)| r.converged).collect();
    let candidates = fits.into_iter().map(|(m, _)| m).collect();
    let jk = jackknife_weights(&data, candidates, &opts)?;
    let crossing = crossing_diagnostic(&jk.model, &data, &tau_grid(data.n())?)?;
    if crossing > 0.0 {
        log::warn!("{:.1}% of training rows have crossing quantile predictions", 100.0 * crossing);
    }
    let mut config = describe_jackknife(&opts);
    config.insert("data".into(), args.data.data.display().to_string());
    config.insert("response".into(), args.data.response.clone());
    config.insert("n".into(), data.n().to_string());
    let diagnostics = Diagnostics {
        candidate_converged: converged,
        weights_converged: jk.weights_converged,
        cv: Some(jk.cv),
        cv_grid_len: Some(jk.cv_grid_len),
        loo_nonconverged: jk.loo_nonconverged,
        crossing: Some(crossing),
        config: config.clone(),
    };
    let file = ModelFile::new(&args.data.response, &data, &jk.model, diagnostics)?;
    file.save(&args.out)?;
    let mut out = header_lines(config);
    let _ = writeln!(out, "# cv = {}", jk.cv);
    let _ = writeln!(out, "# crossing = {crossing}");
    out.push_str(&weights_summary(&file));
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let file = ModelFile::load(&args.model)?;
    let model = file.model()?;
    let mut taus = args.taus.clone();
    for &t in &taus {
        check_tau(t)?;
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let table = Table::read(&args.data)?;
    let data = align_columns(&table, &file)?;

    let mut out = header_lines([
        ("model".to_string(), args.model.display().to_string()),
        ("data".to_string(), args.data.display().to_string()),
    ]);
    let names: Vec<String> = taus.iter().map(|t| format!("tau_{t}")).collect();
    let _ = writeln!(out, "{}", names.join(","));
    let mut crossed = 0;
    for i in 0..data.n() {
        let preds = model.predict_taus(data.row(i), &taus)?;
        if preds.windows(2).any(|w| w[1] < w[0]) {
            crossed += 1;
        }
        let cells: Vec<String> = preds.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    if crossed > 0 {
        log::warn!("{crossed} of {} rows have crossing quantile predictions (not corrected)", data.n());
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out)?;
            Ok(format!("# wrote {} rows to {}\n", data.n(), path.display()))
        }
        None => Ok(out),
    }
}

pub fn cmd_weights(args: &WeightsArgs) -> Result<String> {
    let mut file = ModelFile::load(&args.model)?;
    let table = Table::read(&args.data)?;
    if table.index_of(&file.response).is_none() {
        return Err(QpmaError::Data(format!("missing response column '{}'", file.response)));
    }
    let data = align_columns(&table, &file)?;
    let margs = ModelArgs { thin: args.thin, loo_max_iters: args.loo_max_iters, ..ModelArgs::default() };
    let mut opts = margs.jackknife()?;
    opts.basis = file.tau_basis.clone();
    opts.fit.grid_size = file.diagnostics.config.get("fit_grid").and_then(|v| v.parse().ok());
    let jk = jackknife_weights(&data, file.candidates.clone(), &opts)?;
    file.weights = jk.model.weights.clone();
    file.diagnostics.weights_converged = jk.weights_converged;
    file.diagnostics.cv = Some(jk.cv);
    file.diagnostics.cv_grid_len = Some(jk.cv_grid_len);
    file.diagnostics.loo_nonconverged = jk.loo_nonconverged;
    file.diagnostics.config.insert("cv_thin".into(), opts.cv_thin.to_string());
    file.diagnostics.config.insert("loo_max_iters".into(), opts.loo_max_iters.to_string());
    if let Some(out) = &args.out {
        file.save(out)?;
    }
    let mut out = header_lines(file.diagnostics.config.clone());
    let _ = writeln!(out, "# cv = {}", jk.cv);
    out.push_str(&weights_summary(&file));
    Ok(out)
}

fn benchmark_options(args: &SimulateArgs, run: &RunSettings) -> Result<BenchmarkOptions> {
    let jackknife = args.model.merged(run).jackknife()?;
    let names: Vec<String> = if !args.methods.is_empty() {
        args.methods.clone()
    } else if let Some(m) = &run.methods {
        m.clone()
    } else {
        Method::ALL.iter().map(|m| m.name().to_string()).collect()
    };
    let methods = names.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
    Ok(BenchmarkOptions { methods, jackknife })
}

fn apply_overrides(scenario: &mut Scenario, args: &SimulateArgs) {
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(reps) = args.reps {
        scenario.reps = reps;
    }
}

fn write_report(dir: &Path, prefix: &str, report: &BenchmarkReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, text: &str| std::fs::write(dir.join(format!("{prefix}{name}")), text);
    write("measures.csv", &report.measures_csv())?;
    write("measures.txt", &report.measures_text())?;
    write("replications.csv", &report.replications_csv())?;
    if let (Some(csv), Some(text)) = (report.weights_csv(), report.weights_text()) {
        write("weights.csv", &csv)?;
        write("weights.txt", &text)?;
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let file: SimulateFile = read_toml(&args.scenario)?;
    let mut scenario = file.scenario;
    apply_overrides(&mut scenario, args);
    scenario.validate()?;
    let opts = benchmark_options(args, &file.run)?;
    let report = run_benchmark(&scenario, &opts)?;
    write_report(&args.out, "", &report)?;
    let mut out = report.measures_text();
    if let Some(w) = report.weights_text() {
        out.push_str(&w.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    }
    Ok(out)
}

pub fn cmd_benchmark(args: &SimulateArgs) -> Result<String> {
    let file: BenchmarkFile = read_toml(&args.scenario)?;
    if file.scenario.is_empty() {
        return Err(QpmaError::Config("benchmark file lists no [[scenario]] entries".into()));
    }
    let opts = benchmark_options(args, &file.run)?;
    let mut scenarios = file.scenario;
    for (i, s) in scenarios.iter_mut().enumerate() {
        apply_overrides(s, args);
        s.validate().map_err(|e| QpmaError::Config(format!("scenario {}: {e}", i + 1)))?;
    }
    let mut summary = header_lines(BenchmarkOptions::describe(&opts));
    summary.push_str("scenario,kind,n,t,r2,p,error_case,method,average_oaqpe,sd_oaqpe,winning_ratio,loss_to_jqplma\n");
    for (i, s) in scenarios.iter().enumerate() {
        let report = run_benchmark(s, &opts)?;
        write_report(&args.out, &format!("scenario{}_", i + 1), &report)?;
        for row in &report.measures {
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                i + 1,
                format!("{:?}", s.kind).to_lowercase(),
                s.n,
                s.t,
                s.r2,
                s.p,
                s.error_case,
                row.method,
                row.average_oaqpe,
                row.sd_oaqpe,
                row.winning_ratio,
                row.loss_to_reference.map_or(String::new(), |v| v.to_string())
            );
        }
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("summary.csv"), &summary)?;
    Ok(summary)
}

/// Worker count from `QPMA_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("QPMA_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(QpmaError::Config(format!("QPMA_THREADS must be a positive integer, got '{v}'"))),
        },
        _ => Ok(None),
    }
}

pub fn execute(cli: &Cli) -> Result<String> {
    let run = || match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| QpmaError::Config(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
