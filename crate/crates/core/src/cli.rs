//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the pipeline fails, 2 for bad input,
//! bad configuration or bad flags.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::benchmark::{self, parse_sweep, VariantSpec};
use crate::config::{Config, ExperimentConfig};
use crate::data::{load_dataset, make_split, Dataset, DatasetKind, QosKind};
use crate::error::{Error, Result};
use crate::filtering::{dataset_contexts, FilterInput};
use crate::hierarchy::predict_one;
use crate::seed::mix_all;
use crate::synthetic::SyntheticSpec;

#[derive(Debug, Parser)]
#[command(name = "qos-predict", version, about = "Context-aware hierarchical QoS prediction and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dimensions, density, value range and context availability.
    Inspect(DataArgs),
    /// Predict one held-out (user, service) value.
    Predict(PredictArgs),
    /// Run one variant over densities and episodes.
    Experiment(RunArgs),
    /// Run all eighteen variants on paired splits.
    Ablation(RunArgs),
    /// Vary one parameter over a list of values.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset layout: ws1 or ws2.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// QoS parameter: rt or tp.
    #[arg(long)]
    pub qos: Option<QosKind>,
    /// Directory holding the dataset files.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Use a generated dataset of USERSxSERVICES instead of files.
    #[arg(long, value_name = "USERSxSERVICES", conflicts_with = "data_root")]
    pub synthetic: Option<String>,
    /// Restrict to a random USERSxSERVICES sub-block.
    #[arg(long, value_name = "USERSxSERVICES")]
    pub sub_block: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// User index.
    #[arg(long)]
    pub user: usize,
    /// Service index.
    #[arg(long)]
    pub service: usize,
    /// Fraction of observed values used for training.
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    /// Time slice for ws2 datasets.
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
    /// Emit the full prediction trace as JSON.
    #[arg(long)]
    pub trace: bool,
    /// Directory for the trace file; without it the trace goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training densities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub density: Vec<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub test_k: Option<usize>,
    /// Variant name (experiment and sweep only).
    #[arg(long, default_value = "CAHPHF")]
    pub variant: String,
    /// Report directory.
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `param=v1,v2,...` with param one of k, t_d, nrl1_epochs, nrl2_epochs,
    /// nrl1_hidden_layers, lambda_size.
    #[arg(long)]
    pub sweep: String,
}

fn parse_dims(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("`{text}` is not of the form USERSxSERVICES"));
    let (u, s) = text.to_ascii_lowercase().split_once('x').map(|(a, b)| (a.to_string(), b.to_string())).ok_or_else(bad)?;
    let (u, s) = (u.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?);
    if u == 0 || s == 0 {
        return Err(bad());
    }
    Ok((u, s))
}

/// The configuration file (or defaults) with flags applied on top.
fn resolve(data: &DataArgs) -> Result<Config> {
    let mut config = match &data.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let e = &mut config.experiment;
    if let Some(d) = data.dataset {
        e.dataset = d;
    }
    if let Some(q) = data.qos {
        e.qos = q;
    }
    if let Some(r) = &data.data_root {
        e.data_root = Some(r.clone());
    }
    if let Some(s) = data.seed {
        e.seed = s;
    }
    if let Some(t) = data.threads {
        e.threads = t;
    }
    if let Some(b) = &data.sub_block {
        let (u, s) = parse_dims(b)?;
        e.sub_block = Some([u, s]);
    }
    config.validate()?;
    Ok(config)
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn load(data: &DataArgs, e: &ExperimentConfig) -> Result<Dataset> {
    let dataset = match (&data.synthetic, &e.data_root) {
        (Some(dims), _) => {
            let (n_users, n_services) = parse_dims(dims)?;
            SyntheticSpec {
                n_users,
                n_services,
                kind: e.dataset,
                qos: e.qos,
                ..SyntheticSpec::default()
            }
            .generate(e.seed)
        }
        (None, Some(root)) => load_dataset(root, e.dataset, e.qos)?,
        (None, None) => return Err(Error::Config("no dataset given; pass --data-root, --synthetic or set experiment.data_root".into())),
    };
    match e.sub_block {
        Some([u, s]) => dataset.random_sub_block(u, s, e.sub_block_seed),
        None => Ok(dataset),
    }
}

fn cmd_inspect(args: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let config = resolve(args)?;
    let ds = load(args, &config.experiment)?;
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "{} {}: {} users, {} services", ds.kind, ds.qos, ds.n_users(), ds.n_services()).map_err(w)?;
    for (i, m) in ds.matrices.iter().enumerate() {
        let (lo, hi) = m.observed_range().unwrap_or((0.0, 0.0));
        writeln!(
            out,
            "matrix {i}: {} observed, density {:.4}, range [{lo}, {hi}]",
            m.observed_count(),
            m.density()
        )
        .map_err(w)?;
    }
    let context = if ds.is_context_free() { "context-free" } else { "available" };
    writeln!(out, "context: {context}").map_err(w)?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let config = resolve(&args.data)?;
    init_threads(config.experiment.threads);
    let ds = load(&args.data, &config.experiment)?;
    let m = ds.matrices.get(args.slice).ok_or_else(|| {
        Error::InvalidArgument(format!("slice {} requested but the dataset has {} matrices", args.slice, ds.matrices.len()))
    })?;
    if args.user >= ds.n_users() || args.service >= ds.n_services() {
        return Err(Error::InvalidArgument(format!(
            "target ({}, {}) is outside the {}x{} dataset",
            args.user,
            args.service,
            ds.n_users(),
            ds.n_services()
        )));
    }
    let seed = config.experiment.seed;
    let split = make_split(m, args.density, seed)?;
    if split.is_train(args.user, args.service) {
        return Err(Error::InvalidArgument(format!(
            "target ({}, {}) is part of the training data at density {} with seed {seed}; pick a held-out cell",
            args.user, args.service, args.density
        )));
    }
    let train = split.training_matrix(m)?;
    let contexts = dataset_contexts(&ds);
    let input = FilterInput::from_dataset(&ds, &train, &contexts)?;
    let target_seed = mix_all(seed, &[args.slice as u64, args.user as u64, args.service as u64]);
    let trace = predict_one(&input, args.user, args.service, &config.pipeline, target_seed)?;

    let w = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "prediction {}", trace.value).map_err(w)?;
    if m.is_observed(args.user, args.service) {
        writeln!(out, "actual {}", m.get(args.user, args.service)).map_err(w)?;
    }
    if args.trace {
        let json = serde_json::to_string_pretty(&trace).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        match &args.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("trace.json");
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
                writeln!(out, "trace written to {}", path.display()).map_err(w)?;
            }
            None => writeln!(out, "{json}").map_err(w)?,
        }
    }
    Ok(())
}

/// Resolved config for a run; `default_density` applies when neither the
/// flags nor a config file name densities.
fn run_config(args: &RunArgs, default_density: Option<f64>) -> Result<Config> {
    let mut config = resolve(&args.data)?;
    let e = &mut config.experiment;
    if !args.density.is_empty() {
        e.densities = args.density.clone();
    } else if let (Some(d), None) = (default_density, &args.data.config) {
        e.densities = vec![d];
    }
    if let Some(n) = args.episodes {
        e.episodes = n;
    }
    if let Some(k) = args.test_k {
        e.test_k = k;
    }
    config.validate()?;
    Ok(config)
}

fn save_config(dir: &Path, config: &Config) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn finish(out: &mut dyn Write, table: &str, files: &[PathBuf]) -> Result<()> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    write!(out, "{table}").map_err(w)?;
    for f in files {
        writeln!(out, "wrote {}", f.display()).map_err(w)?;
    }
    Ok(())
}

fn cmd_experiment(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = run_config(args, None)?;
    init_threads(config.experiment.threads);
    let variant = VariantSpec::by_name(&args.variant)?;
    let ds = load(&args.data, &config.experiment)?;
    let report = benchmark::run_experiment(&ds, &variant, &config.experiment, &config.pipeline)?;
    let reports = [report];
    let mut files = benchmark::write_reports(&args.out, "experiment", &reports)?;
    files.push(save_config(&args.out, &config)?);
    finish(out, &benchmark::summary_csv(&reports), &files)
}

fn cmd_ablation(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = run_config(args, Some(0.3))?;
    init_threads(config.experiment.threads);
    let ds = load(&args.data, &config.experiment)?;
    let reports = benchmark::run_ablation_suite(&ds, &config.experiment, &config.pipeline)?;
    let mut files = benchmark::write_reports(&args.out, "ablation", &reports)?;
    let improvements = benchmark::improvement_csv(&reports, "CAHPHF")?;
    let path = args.out.join("ablation_improvement.csv");
    std::fs::write(&path, &improvements).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    files.push(save_config(&args.out, &config)?);
    finish(out, &improvements, &files)
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let (param, values) = parse_sweep(&args.sweep)?;
    let config = run_config(&args.run, Some(0.3))?;
    init_threads(config.experiment.threads);
    let variant = VariantSpec::by_name(&args.run.variant)?;
    let ds = load(&args.run.data, &config.experiment)?;
    let points = benchmark::run_sweep(&ds, &variant, param, &values, &config.experiment, &config.pipeline)?;
    let dir = &args.run.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = benchmark::sweep_csv(&points);
    let csv = dir.join(format!("sweep_{param}.csv"));
    std::fs::write(&csv, &table).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join(format!("sweep_{param}.json"));
    let text = serde_json::to_string_pretty(&points).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let files = [csv, json, save_config(dir, &config)?];
    finish(out, &table, &files)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::Ablation(a) => cmd_ablation(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
    }
}

pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_input_error() => 2,
        Err(_) => 1,
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let result = run(&cli, &mut stdout.lock());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(parse_dims("150x1000").unwrap(), (150, 1000));
        assert_eq!(parse_dims("3X4").unwrap(), (3, 4));
        assert!(parse_dims("0x4").is_err());
        assert!(parse_dims("12").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "qos-predict",
            "experiment",
            "--dataset",
            "ws1",
            "--qos",
            "tp",
            "--synthetic",
            "20x30",
            "--density",
            "0.1,0.3",
            "--episodes",
            "2",
            "--threads",
            "1",
        ])
        .unwrap();
        let Command::Experiment(a) = cli.command else { panic!() };
        assert_eq!(a.density, vec![0.1, 0.3]);
        assert_eq!(a.data.qos, Some(QosKind::Tp));
        assert!(Cli::try_parse_from(["qos-predict", "inspect", "--dataset", "ws9"]).is_err());
    }
}
