//! Command-line interface: `fit`, `predict`, `simulate`, `benchmark`,
//! `sweep` and `timing`.
//!
//! Failures print one JSON line `{"error": kind, "message": ...}` on stderr.
//! Exit codes: 0 success, 2 usage or configuration, 3 data or I/O,
//! 4 numerical.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{PriorConfig, PriorSettings};
use crate::data::{preprocess, Outcome, Schema, Table};
use crate::dgp::{generate_binary, generate_friedman, generate_recovery, Simulated};
use crate::error::{DataError, Error};
use crate::eval::{benchmark, sweep, timing_harness};
use crate::io;
use crate::ridge::Activation;
use crate::sampler::{predict, run_chains, ChainSettings};

#[derive(Debug, Parser)]
#[command(name = "ridgebart", version, about = "BART with ridge-function leaves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and write the posterior draws.
    Fit(FitArgs),
    /// Posterior mean and credible interval for each row of a CSV file.
    Predict(PredictArgs),
    /// Write a synthetic dataset, its noiseless truth and a schema.
    Simulate(SimulateArgs),
    /// Cross-validated comparison of activations against the constant baseline.
    Benchmark(BenchmarkArgs),
    /// Sensitivity to (trees, ridge functions) and to the rho prior.
    Sweep(SweepArgs),
    /// Wall time per tree update across sample sizes.
    Timing(TimingArgs),
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long, default_value = "cosine")]
    pub activation: Activation,
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    /// Ridge functions per leaf.
    #[arg(long, default_value_t = 1)]
    pub ridge: usize,
    /// Shape of the Gamma prior on the inverse length scale.
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// Prior probability that rho falls below --rho-threshold.
    #[arg(long, default_value_t = 0.5)]
    pub prob_rho_lt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_threshold: f64,
    /// Apply a random rotation to each leaf's ridge directions.
    #[arg(long)]
    pub rotate_omega: bool,
}

impl PriorArgs {
    pub fn settings(&self) -> PriorSettings {
        PriorSettings {
            trees: self.trees,
            ridge: self.ridge,
            activation: self.activation,
            nu: self.nu,
            rho_threshold: self.rho_threshold,
            prob_rho_below: self.prob_rho_lt,
            rotate_omega: self.rotate_omega,
            ..PriorSettings::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 10)]
    pub chains: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chains run at once; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

impl ChainArgs {
    pub fn settings(&self) -> ChainSettings {
        ChainSettings {
            chains: self.chains,
            iterations: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file: {"outcome": name, "columns": [{"name": .., "role": "x"|"z"|"both"|"categorical"}]}.
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub outcome: Outcome,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration diagnostics as newline-delimited JSON.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// CSV with columns row, mean, lower, upper. For binary models these are
    /// success probabilities.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum DgpName {
    Recovery,
    Friedman,
    Binary,
}

#[derive(Debug, Args)]
pub struct DgpArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpName,
    /// Rows (patients for the recovery design).
    #[arg(long)]
    pub n: usize,
    /// Noise sd of the Friedman design.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Irrelevant covariates appended to the Friedman design.
    #[arg(long, default_value_t = 0)]
    pub p_extra: usize,
}

impl DgpArgs {
    fn generate(&self, seed: u64) -> Simulated {
        match self.dgp {
            DgpName::Recovery => generate_recovery(self.n, seed),
            DgpName::Friedman => generate_friedman(self.n, self.sigma, self.p_extra, seed),
            DgpName::Binary => generate_binary(self.n, seed),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving data.csv, truth.csv and schema.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    /// Seed of the simulated dataset; --seed drives folds and chains.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Activations to compare; the constant baseline is always added.
    #[arg(long, value_delimiter = ',', default_value = "cosine,relu")]
    pub activations: Vec<Activation>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// One of this many folds is held out.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, value_delimiter = ',', default_value = "2500,5000,10000,20000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "constant,cosine")]
    pub activations: Vec<Activation>,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub ridge: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    /// Untimed sweeps before measuring.
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    /// Timed sweeps per cell.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            report("usage", &e.render().to_string());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = classify(&e);
            report(kind, &e.to_string());
            code
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.trim() });
    eprintln!("{line}");
}

/// Error kind label and exit code.
pub fn classify(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Config(_) => ("config", 2),
        Error::Data(_) => ("data", 3),
        Error::Format(_) => ("format", 3),
        Error::Io(_) => ("io", 3),
        Error::Tree(_) => ("tree", 4),
        Error::Numerical(_) => ("numerical", 4),
    }
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit(a) => fit(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Benchmark(a) => benchmark_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Timing(a) => timing_cmd(&a),
    }
}

fn csv_error(e: csv::Error) -> Error {
    DataError::Csv(e.to_string()).into()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn fit(a: &FitArgs) -> Result<(), Error> {
    let table = Table::read_csv(&a.data)?;
    let schema = Schema::from_json_file(&a.schema)?;
    let (data, transform) = preprocess(&table, &schema, a.outcome)?;
    let config = PriorConfig::calibrate(&a.prior.settings(), &data)?;
    log::info!(
        "fitting n={} p={} q={} M={} D={} tau={:.4} lambda={:.4}",
        data.n(),
        data.p(),
        data.q(),
        config.trees,
        config.ridge,
        config.tau,
        config.lambda
    );
    let (samples, records) = run_chains(&data, &config, &a.chain.settings(), Some(transform))?;
    io::save(&a.out, &samples)?;
    if let Some(path) = &a.diagnostics {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &records {
            serde_json::to_writer(&mut w, r).map_err(|e| DataError::Csv(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<(), Error> {
    let samples = io::load(&a.model)?;
    let transform = samples
        .transform
        .as_ref()
        .ok_or_else(|| DataError::Dimension("model has no input transform; it was not fit from a CSV file".into()))?;
    let table = Table::read_csv(&a.data)?;
    let (x, z) = transform.apply(&table)?;
    let summary = predict(&samples, &x, &z, a.level)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_error)?;
    w.write_record(["row", "mean", "lower", "upper"]).map_err(csv_error)?;
    for (i, s) in summary.iter().enumerate() {
        w.write_record([i.to_string(), s.mean.to_string(), s.lower.to_string(), s.upper.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names, schema and the data table of a simulated dataset.
fn simulated_table(name: DgpName, sim: &Simulated) -> (Vec<String>, Vec<Vec<f64>>, Schema) {
    use crate::data::{ColumnSpec, Role};
    let x = sim.data.x();
    let y = sim.data.raw_y();
    let mut headers = Vec::new();
    let mut roles = Vec::new();
    let x_role = if name == DgpName::Friedman { Role::Both } else { Role::X };
    if name == DgpName::Recovery {
        headers.push("patient".to_string());
    }
    for j in 0..x.ncols() {
        headers.push(format!("x{}", j + 1));
        roles.push((format!("x{}", j + 1), x_role));
    }
    let z_name = match name {
        DgpName::Recovery => Some("months"),
        DgpName::Binary => Some("z"),
        DgpName::Friedman => None,
    };
    if let Some(z) = z_name {
        headers.push(z.to_string());
        roles.push((z.to_string(), Role::Z));
    }
    headers.push("y".to_string());
    let rows = (0..sim.data.n())
        .map(|i| {
            let mut r = Vec::with_capacity(headers.len());
            if let Some(p) = &sim.patient {
                r.push(p[i] as f64);
            }
            r.extend_from_slice(x.row(i));
            if z_name.is_some() {
                r.push(sim.z_raw.get(i, 0));
            }
            r.push(y[i]);
            r
        })
        .collect();
    let schema = Schema {
        outcome: "y".into(),
        columns: roles.into_iter().map(|(name, role)| ColumnSpec { name, role }).collect(),
    };
    (headers, rows, schema)
}

fn simulate(a: &SimulateArgs) -> Result<(), Error> {
    let sim = a.dgp.generate(a.seed);
    std::fs::create_dir_all(&a.out)?;
    let (headers, rows, schema) = simulated_table(a.dgp.dgp, &sim);
    let mut w = csv::Writer::from_path(a.out.join("data.csv")).map_err(csv_error)?;
    w.write_record(&headers).map_err(csv_error)?;
    for r in &rows {
        w.write_record(r.iter().map(f64::to_string)).map_err(csv_error)?;
    }
    w.flush()?;
    let mut t = csv::Writer::from_path(a.out.join("truth.csv")).map_err(csv_error)?;
    t.write_record(["row", "truth"]).map_err(csv_error)?;
    for (i, f) in sim.truth.iter().enumerate() {
        t.write_record([i.to_string(), f.to_string()]).map_err(csv_error)?;
    }
    t.flush()?;
    let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
    std::fs::write(a.out.join("schema.json"), text + "\n")?;
    Ok(())
}

fn benchmark_cmd(a: &BenchmarkArgs) -> Result<(), Error> {
    let sim = a.dgp.generate(a.data_seed);
    let mut activations = a.activations.clone();
    if !activations.contains(&Activation::Constant) {
        activations.push(Activation::Constant);
    }
    let chain = a.chain.settings();
    let rows = benchmark(&sim, &activations, &a.prior.settings(), &chain, a.folds, chain.seed)?;
    write_rows(&a.out, &rows)?;
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "model", "rmse", "logloss", "coverage", "seconds");
    for act in activations {
        let mine: Vec<_> = rows.iter().filter(|r| r.model == act).collect();
        let k = mine.len() as f64;
        let mean = |f: &dyn Fn(&crate::eval::BenchmarkRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / k;
        let ll = if mine.iter().all(|r| r.logloss.is_some()) {
            format!("{:.4}", mean(&|r| r.logloss.unwrap_or(f64::NAN)))
        } else {
            "-".into()
        };
        println!(
            "{:<10} {:>10.4} {:>10} {:>10.3} {:>10.1}",
            act.name(),
            mean(&|r| r.rmse),
            ll,
            mean(&|r| r.coverage),
            mean(&|r| r.seconds)
        );
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<(), Error> {
    let sim = a.dgp.generate(a.data_seed);
    let chain = a.chain.settings();
    let rows = sweep(&sim, &a.prior.settings(), &chain, a.folds, chain.seed)?;
    write_rows(&a.out, &rows)?;
    for r in &rows {
        println!(
            "{:<12} M={:<4} D={:<3} p={:<5} q={:<4} rmse={:.4} coverage={:.3}",
            r.grid, r.trees, r.ridge, r.prob_rho_below, r.rho_threshold, r.rmse, r.coverage
        );
    }
    Ok(())
}

fn timing_cmd(a: &TimingArgs) -> Result<(), Error> {
    let mut cases = Vec::new();
    for &act in &a.activations {
        for &d in &a.ridge {
            if act != Activation::Constant || !cases.contains(&(act, 1)) {
                cases.push((act, if act == Activation::Constant { 1 } else { d }));
            }
        }
    }
    let report = timing_harness(&cases, &a.sizes, a.reps, a.trees, a.warmup, a.seed)?;
    write_rows(&a.out, &report.rows)?;
    for &(act, d) in &cases {
        match report.scaling_exponent(act, d) {
            Some(s) => println!("{act} D={d}: scaling exponent {s:.3}"),
            None => println!("{act} D={d}: too few sizes for a scaling exponent"),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fit_defaults() {
        let cli = Cli::try_parse_from(["ridgebart", "fit", "--data", "d.csv", "--schema", "s.json", "--out", "m.json"]).unwrap();
        let Command::Fit(a) = cli.command else { panic!("not fit") };
        let s = a.prior.settings();
        assert_eq!((s.trees, s.ridge, s.nu), (50, 1, 3.0));
        assert_eq!(s.activation, Activation::Cosine);
        let c = a.chain.settings();
        assert_eq!((c.chains, c.iterations, c.burn_in, c.thin), (10, 2000, 1000, 1));
        let lambda = crate::ridge::solve_lambda(s.nu, s.rho_threshold, s.prob_rho_below);
        assert!((lambda - 0.788).abs() < 1e-3);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run_from(["ridgebart", "simulate", "--dgp", "nope", "--n", "3", "--out", "x"]), 2);
        assert_eq!(run_from(["ridgebart", "fit", "--activation", "sigmoid"]), 2);
    }

    #[test]
    fn error_classes() {
        assert_eq!(classify(&DataError::Empty.into()).1, 3);
        assert_eq!(classify(&crate::error::NumericalError::NonFinite("x").into()).1, 4);
        assert_eq!(classify(&crate::error::ConfigError::Invalid("x".into()).into()).1, 2);
    }
}
