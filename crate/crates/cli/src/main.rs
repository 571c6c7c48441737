use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scate_core::data::{self, Task};
use scate_core::error::{Result, ScateError};
use scate_core::experiment::{self, BaseKind, DatasetSpec, Method, NaiveTarget, RunConfig};
use scate_core::model_io;

#[derive(Parser)]
#[command(name = "scate", version, about = "Distill tree ensembles into small spectral networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, distill and evaluate one configuration per seed.
    Pipeline(RunArgs),
    /// Sweep methods and architectures; report best-under-budget and Pareto tables.
    Sweep(RunArgs),
    /// Report the operator spectrum and its power-law decay fit.
    Spectrum(SpectrumArgs),
    /// Time training and per-1000-row inference.
    BenchTime(RunArgs),
    /// Write a synthetic Friedman #1 dataset as CSV.
    GenData(GenDataArgs),
    /// Print the header and sizes of a serialized model.
    InspectModel(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaseArg {
    Rf,
    Gbm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Scate,
    NaiveMlp,
    NaiveRf,
    Oracle,
    Base,
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// CSV dataset (requires --target).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Rows of synthetic Friedman #1 data (ignored with --data).
    #[arg(long)]
    friedman_n: Option<usize>,
    #[arg(long, value_enum)]
    base: Option<BaseArg>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    operator_cap: Option<usize>,
    /// Architecture for `pipeline`, as WIDTHxDEPTH.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size; 0 trains full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    methods: Option<Vec<MethodArg>>,
    /// Naive network imitates only the ensemble output instead of every tree.
    #[arg(long)]
    naive_scalar: bool,
    #[arg(long)]
    prune_over_budget: bool,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Read a square operator matrix written by this tool instead of building one.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    top: usize,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

fn config_error(msg: impl Into<String>) -> ScateError {
    ScateError::Config(msg.into())
}

fn parse_arch(s: &str) -> Result<[usize; 2]> {
    let (w, d) = s.split_once(['x', 'X']).ok_or_else(|| config_error(format!("arch `{s}` is not WIDTHxDEPTH")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| config_error(format!("arch `{s}` is not WIDTHxDEPTH")));
    Ok([parse(w)?, parse(d)?])
}

fn build_config(a: &RunArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &a.output_dir {
        c.output_dir = dir.clone();
    }
    if let Some(path) = &a.data {
        let target = a.target.clone().ok_or_else(|| config_error("--data requires --target"))?;
        let task = match a.task {
            Some(TaskArg::Classification) => Task::BinaryClassification,
            _ => Task::Regression,
        };
        c.dataset = DatasetSpec::Csv { path: path.clone(), target, task };
    } else if let Some(n) = a.friedman_n {
        c.dataset = match c.dataset {
            DatasetSpec::Friedman1 { d, noise_sd, seed, .. } => DatasetSpec::Friedman1 { n, d, noise_sd, seed },
            DatasetSpec::Csv { .. } => DatasetSpec::Friedman1 { n, d: 10, noise_sd: 1.0, seed: None },
        };
    }
    if let Some(b) = a.base {
        c.base.kind = match b {
            BaseArg::Rf => BaseKind::Rf,
            BaseArg::Gbm => BaseKind::Gbm,
        };
    }
    if a.n_trees.is_some() {
        c.base.n_trees = a.n_trees;
    }
    if a.max_depth.is_some() {
        c.base.max_depth = a.max_depth;
    }
    if let Some(v) = a.learning_rate {
        c.base.learning_rate = v;
    }
    if let Some(v) = a.p {
        c.p = v;
    }
    if let Some(v) = a.operator_cap {
        c.operator_cap = v;
    }
    if let Some(s) = &a.arch {
        c.arch = parse_arch(s)?;
    }
    if let Some(v) = &a.widths {
        c.widths = v.clone();
    }
    if let Some(v) = &a.depths {
        c.depths = v.clone();
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.gamma {
        c.gamma = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = (v > 0).then_some(v);
    }
    if let Some(v) = &a.seeds {
        c.seeds = v.clone();
    }
    if let Some(v) = &a.budgets {
        c.budgets = v.clone();
    }
    if let Some(v) = &a.methods {
        c.methods = v
            .iter()
            .map(|m| match m {
                MethodArg::Scate => Method::Scate,
                MethodArg::NaiveMlp => Method::NaiveMlp,
                MethodArg::NaiveRf => Method::NaiveRf,
                MethodArg::Oracle => Method::Oracle,
                MethodArg::Base => Method::Base,
            })
            .collect();
    }
    if a.naive_scalar {
        c.naive_target = NaiveTarget::Scalar;
    }
    if a.prune_over_budget {
        c.prune_over_budget = true;
    }
    if let Some(v) = a.repetitions {
        c.bench_repetitions = v;
    }
    c.validate()?;
    Ok(c)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(model_io::SCTE_MAGIC) {
        let m = model_io::deserialize(&bytes)?;
        print_json(&serde_json::json!({
            "format": "scte",
            "bytes": bytes.len(),
            "layer_dims": m.mlp.layer_dims,
            "params": m.mlp.param_count(),
            "p": m.p,
            "task": m.task,
        }))
    } else if bytes.starts_with(model_io::SCTF_MAGIC) {
        let f = model_io::deserialize_forest(&bytes)?;
        let nodes: usize = f.trees.iter().map(|t| t.value.len()).sum();
        print_json(&serde_json::json!({
            "format": "sctf",
            "bytes": bytes.len(),
            "kind": format!("{:?}", f.kind).to_lowercase(),
            "n_features": f.n_features,
            "trees": f.trees.len(),
            "nodes": nodes,
        }))
    } else {
        Err(ScateError::BadMagic)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(a) => {
            let report = experiment::cmd_pipeline(&build_config(&a)?)?;
            print_json(&report.summary)
        }
        Command::Sweep(a) => {
            let out = experiment::cmd_sweep(&build_config(&a)?)?;
            for f in &out.failures {
                eprintln!("cell failed: {} {} seed {}: {}", f.method.name(), f.cell, f.seed, f.error);
            }
            print_json(&out.best)
        }
        Command::Spectrum(a) => {
            let c = build_config(&a.run)?;
            let s = match &a.matrix {
                Some(path) => {
                    let m = scate_core::operator::read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))?;
                    let s = experiment::spectrum_from_matrix(&m, a.top, c.seeds[0])?;
                    experiment::write_spectrum_outputs(&c.output_dir, &s)?;
                    s
                }
                None => experiment::cmd_spectrum(&RunConfig { spectrum_top: a.top, ..c })?,
            };
            print_json(&s.fit)
        }
        Command::BenchTime(a) => {
            let rows = experiment::cmd_bench_time(&build_config(&a)?)?;
            print_json(&rows)
        }
        Command::GenData(a) => {
            let ds = data::gen_friedman1(a.n, a.d, a.noise_sd, a.seed)?;
            ds.write_csv(&a.out)
        }
        Command::InspectModel(a) => inspect(&a.path),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
