//! End-to-end runs: the distillation pipeline, size-constrained sweeps with
//! best-under-budget tables and Pareto frontiers, spectrum reports, and
//! timing benchmarks. Every artifact lands under the configured output
//! directory with a fixed file name.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cart::TreeParams;
use crate::data::{self, Dataset, Task};
use crate::distill::{self, DistilledModel, LossRecord, TrainHyper};
use crate::ensemble::{fit_gbm, fit_rf, Forest, ForestParams, GbmModel, GbmParams};
use crate::error::{Result, ScateError, StageExt};
use crate::metrics;
use crate::mlp::arch_dims;
use crate::model_io::{self, CompactModel, MinimalForest};
use crate::operator::{self, KernelMatrix, LeafPolicy, SmootherState};
use crate::rng::derive_seed;
use crate::spectral::{self, DecayFit, Decomposition, EigOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Csv { path: PathBuf, target: String, task: Task },
    /// `seed: None` draws a fresh sample per run seed.
    Friedman1 { n: usize, d: usize, noise_sd: f64, seed: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Rf,
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseModelConfig {
    pub kind: BaseKind,
    /// Defaults to 250 for forests and 100 for boosting.
    pub n_trees: Option<usize>,
    /// Defaults to 15 for forests and 6 for boosting.
    pub max_depth: Option<usize>,
    pub unlimited_depth: bool,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub mtry: Option<usize>,
    pub balance_gamma: f64,
    pub honest: bool,
    pub subsample_fraction: f64,
    pub bootstrap: bool,
}

impl Default for BaseModelConfig {
    fn default() -> Self {
        BaseModelConfig {
            kind: BaseKind::Rf,
            n_trees: None,
            max_depth: None,
            unlimited_depth: false,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            mtry: None,
            balance_gamma: 0.0,
            honest: false,
            subsample_fraction: 1.0,
            bootstrap: true,
        }
    }
}

impl BaseModelConfig {
    pub fn n_trees(&self) -> usize {
        self.n_trees.unwrap_or(match self.kind {
            BaseKind::Rf => 250,
            BaseKind::Gbm => 100,
        })
    }

    pub fn depth(&self) -> Option<usize> {
        if self.unlimited_depth {
            return None;
        }
        Some(self.max_depth.unwrap_or(match self.kind {
            BaseKind::Rf => 15,
            BaseKind::Gbm => 6,
        }))
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.depth(),
            min_samples_leaf: self.min_samples_leaf,
            mtry: self.mtry,
            balance_gamma: self.balance_gamma,
            honest: self.honest,
            subsample_fraction: self.subsample_fraction,
            bootstrap: self.bootstrap && self.kind == BaseKind::Rf,
        }
    }

    pub fn label(&self) -> String {
        let depth = self.depth().map_or("none".to_string(), |d| d.to_string());
        match self.kind {
            BaseKind::Rf => format!("rf(trees={},depth={depth})", self.n_trees()),
            BaseKind::Gbm => format!("gbm(trees={},depth={depth},lr={})", self.n_trees(), self.learning_rate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scate,
    NaiveMlp,
    NaiveRf,
    Oracle,
    Base,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Scate, Method::NaiveMlp, Method::NaiveRf, Method::Oracle, Method::Base];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scate => "scate",
            Method::NaiveMlp => "naive_mlp",
            Method::NaiveRf => "naive_rf",
            Method::Oracle => "oracle",
            Method::Base => "base",
        }
    }

    fn id(self) -> u64 {
        self as u64 + 1
    }
}

/// What the naive network imitates: every tree's output or only the ensemble output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveTarget {
    PerTree,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub base: BaseModelConfig,
    pub p: usize,
    pub operator_cap: usize,
    /// `[width, depth]` trained by `pipeline`.
    pub arch: [usize; 2],
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub epochs: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub budgets: Vec<usize>,
    pub split_ratios: [f64; 3],
    pub dense_eig_max_n: usize,
    pub svd_oversample: usize,
    pub svd_power_iters: usize,
    /// Spectral values kept for reports and the decay fit (at most 100).
    pub spectrum_top: usize,
    pub methods: Vec<Method>,
    pub naive_target: NaiveTarget,
    pub small_rf_estimators: Vec<usize>,
    pub small_rf_depths: Vec<Option<usize>>,
    /// Skip sweep cells whose size is known in advance to exceed the largest budget.
    pub prune_over_budget: bool,
    pub bench_repetitions: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::Friedman1 { n: 1000, d: 10, noise_sd: 1.0, seed: None },
            base: BaseModelConfig::default(),
            p: 50,
            operator_cap: 4000,
            arch: [16, 2],
            widths: vec![4, 8, 16, 32, 64, 128],
            depths: vec![1, 2, 3, 4, 5],
            epochs: 200,
            gamma: 0.001,
            lr: 1e-3,
            batch_size: Some(distill::DEFAULT_BATCH_SIZE),
            seeds: vec![0],
            budgets: vec![10240, 102400],
            split_ratios: data::DEFAULT_SPLIT_RATIOS,
            dense_eig_max_n: 2000,
            svd_oversample: 10,
            svd_power_iters: 4,
            spectrum_top: 100,
            methods: Method::ALL.to_vec(),
            naive_target: NaiveTarget::PerTree,
            small_rf_estimators: distill::SMALL_RF_ESTIMATORS.to_vec(),
            small_rf_depths: distill::SMALL_RF_DEPTHS.to_vec(),
            prune_over_budget: false,
            bench_repetitions: 5,
            output_dir: PathBuf::from("scate_out"),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ScateError::Config(msg.into()))
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| ScateError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScateError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p", self.p),
            ("operator_cap", self.operator_cap),
            ("epochs", self.epochs),
            ("arch width", self.arch[0]),
            ("spectrum_top", self.spectrum_top),
            ("bench_repetitions", self.bench_repetitions),
            ("base n_trees", self.base.n_trees()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return config_err("widths must be non-empty and positive");
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return config_err("depths must be non-empty and positive");
        }
        if self.seeds.is_empty() {
            return config_err("seeds must be non-empty");
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return config_err("budgets must be non-empty and positive");
        }
        if self.budgets.windows(2).any(|w| w[0] > w[1]) {
            return config_err("budgets must be sorted ascending");
        }
        if !(self.gamma >= 0.0) {
            return config_err("gamma must be >= 0");
        }
        if !(self.lr > 0.0) {
            return config_err("lr must be > 0");
        }
        if self.batch_size == Some(0) {
            return config_err("batch_size must be positive");
        }
        if self.small_rf_estimators.contains(&0) {
            return config_err("small_rf_estimators must be positive");
        }
        if let DatasetSpec::Friedman1 { n, d, noise_sd, .. } = self.dataset {
            if n < 3 {
                return config_err("friedman1 n must be >= 3");
            }
            if d < 5 {
                return config_err("friedman1 d must be >= 5");
            }
            if !(noise_sd >= 0.0) {
                return config_err("friedman1 noise_sd must be >= 0");
            }
        }
        if self.base.kind == BaseKind::Gbm && !(self.base.learning_rate > 0.0 && self.base.learning_rate <= 1.0) {
            return config_err("gbm learning_rate must be in (0, 1]");
        }
        Ok(())
    }

    fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper { epochs: self.epochs, gamma: self.gamma, lr: self.lr, seed, batch_size: self.batch_size }
    }

    fn eig_options(&self, seed: u64) -> EigOptions {
        EigOptions {
            dense_max_n: self.dense_eig_max_n,
            oversample: self.svd_oversample,
            power_iters: self.svd_power_iters,
            seed,
            ..EigOptions::default()
        }
    }

    /// Network grid, in width-major order.
    pub fn arch_grid(&self) -> Vec<(usize, usize)> {
        self.widths.iter().flat_map(|&w| self.depths.iter().map(move |&d| (w, d))).collect()
    }

    fn spectrum_rows(&self) -> usize {
        self.spectrum_top.min(100)
    }
}

/// The fitted base ensemble.
#[derive(Debug, Clone)]
pub enum BaseModel {
    Rf(Forest),
    Gbm(GbmModel),
}

impl BaseModel {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        match self {
            BaseModel::Rf(f) => f.predict_batch(x),
            BaseModel::Gbm(g) => g.predict_batch(x),
        }
    }

    pub fn size_bytes(&self) -> usize {
        match self {
            BaseModel::Rf(f) => model_io::forest_size(&f.trees),
            BaseModel::Gbm(g) => model_io::forest_size(&g.trees),
        }
    }

    pub fn minimal(&self) -> MinimalForest {
        match self {
            BaseModel::Rf(f) => MinimalForest::from_forest(f),
            BaseModel::Gbm(g) => MinimalForest::from_gbm(g),
        }
    }

    /// One column per tree, scaled so that the column mean is the ensemble prediction.
    pub fn per_tree(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            BaseModel::Rf(f) => f.predict_per_tree(x),
            BaseModel::Gbm(g) => {
                let b = g.trees.len() as f64;
                let mut out = Array2::zeros((x.nrows(), g.trees.len()));
                for (i, r) in x.rows().into_iter().enumerate() {
                    let xs = r.to_vec();
                    for (t, tree) in g.trees.iter().enumerate() {
                        out[[i, t]] = g.base_score + b * g.learning_rate * tree.value[tree.leaf_of(&xs)];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// The operator matrix that was decomposed.
#[derive(Debug, Clone)]
pub enum OperatorMatrix {
    Kernel(KernelMatrix),
    Smoother(SmootherState),
}

impl OperatorMatrix {
    pub fn values(&self) -> &Array2<f64> {
        match self {
            OperatorMatrix::Kernel(k) => &k.values,
            OperatorMatrix::Smoother(s) => &s.matrix,
        }
    }
}

/// Everything upstream of network training for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub task: Task,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub base: BaseModel,
    /// Training-set positions of the rows the operator is built on.
    pub op_rows: Vec<usize>,
    pub x_op: Array2<f64>,
    pub y_op: Vec<f64>,
    pub operator: OperatorMatrix,
    pub decomp: Decomposition,
    pub frobenius_norm: f64,
    pub base_train_s: f64,
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    match spec {
        DatasetSpec::Csv { path, target, task } => data::load_csv(path, target, *task),
        DatasetSpec::Friedman1 { n, d, noise_sd, seed: fixed } => {
            data::gen_friedman1(*n, *d, *noise_sd, fixed.unwrap_or(seed))
        }
    }
}

pub fn fit_base(cfg: &BaseModelConfig, train: &Dataset, seed: u64) -> Result<BaseModel> {
    let tree = cfg.tree_params();
    match cfg.kind {
        BaseKind::Rf => fit_rf(train, &ForestParams { n_trees: cfg.n_trees(), tree, seed }).map(BaseModel::Rf),
        BaseKind::Gbm => fit_gbm(
            train,
            &GbmParams { n_trees: cfg.n_trees(), learning_rate: cfg.learning_rate, tree, seed },
        )
        .map(BaseModel::Gbm),
    }
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Data, split, base model, operator and decomposition for one seed.
pub fn prepare(config: &RunConfig, seed: u64) -> Result<Prepared> {
    config.validate()?;
    let ds = load_dataset(&config.dataset, derive_seed(seed, &[10])).stage("load")?;
    let split = data::split(ds.n_rows(), config.split_ratios, derive_seed(seed, &[11])).stage("split")?;
    let train = ds.subset(&split.train);
    let valid = ds.subset(&split.validation);
    let test = ds.subset(&split.test);
    let t0 = Instant::now();
    let base = fit_base(&config.base, &train, derive_seed(seed, &[12])).stage("base_model")?;
    let base_train_s = t0.elapsed().as_secs_f64();

    let all: Vec<usize> = (0..train.n_rows()).collect();
    let op_rows = operator::subsample_operator(&all, config.operator_cap, derive_seed(seed, &[13]));
    let subsampled = op_rows.len() < all.len();
    let op_set = train.subset(&op_rows);
    let x_op = op_set.features.clone();
    let y_op = op_set.target.to_vec();
    let operator = match &base {
        BaseModel::Rf(f) => OperatorMatrix::Kernel(operator::rf_kernel_matrix(f, &x_op).stage("operator")?),
        BaseModel::Gbm(g) => {
            let policy = if subsampled { LeafPolicy::AncestorFallback } else { LeafPolicy::Strict };
            OperatorMatrix::Smoother(operator::gbm_smoother_matrix_with(g, &x_op, policy).stage("operator")?)
        }
    };
    let n_op = x_op.nrows();
    let want = config.p.max(config.spectrum_rows()).min(n_op);
    let decomp = match &operator {
        OperatorMatrix::Kernel(k) => {
            let opts = config.eig_options(derive_seed(seed, &[14]));
            let rank = if n_op <= opts.dense_max_n { None } else { Some(want) };
            Decomposition::Eigen(spectral::eig_sym_with(&k.values, rank, &opts).stage("decomposition")?)
        }
        OperatorMatrix::Smoother(s) => Decomposition::Svd(
            spectral::svd_trunc(
                &s.matrix,
                want,
                config.svd_oversample,
                config.svd_power_iters,
                derive_seed(seed, &[14]),
            )
            .stage("decomposition")?,
        ),
    };
    if config.p > decomp.rank() {
        return Err(ScateError::RankTooLarge { requested: config.p, available: decomp.rank() }.at("decomposition"));
    }
    let frobenius_norm = frobenius(operator.values());
    Ok(Prepared {
        seed,
        task: ds.task,
        train,
        valid,
        test,
        base,
        op_rows,
        x_op,
        y_op,
        operator,
        decomp,
        frobenius_norm,
        base_train_s,
    })
}

impl Prepared {
    /// Operator weights of query rows against the operator rows.
    pub fn cross(&self, x_query: &Array2<f64>) -> Result<Array2<f64>> {
        match (&self.base, &self.operator) {
            (BaseModel::Rf(f), OperatorMatrix::Kernel(_)) => operator::rf_kernel_cross(f, &self.x_op, x_query),
            (BaseModel::Gbm(g), OperatorMatrix::Smoother(s)) => operator::gbm_smoother_cross(s, g, x_query),
            _ => unreachable!("operator kind follows the base model"),
        }
    }

    pub fn score(&self, ds: &Dataset, pred: &Array1<f64>) -> f64 {
        metrics::score(self.task, ds.target.as_slice().expect("contiguous"), pred.as_slice().expect("contiguous"))
    }

    pub fn decay_fit(&self, top: usize) -> Result<DecayFit> {
        let values = self.decomp.values().to_vec();
        spectral::decay_fit(&values, top.min(values.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusErrors {
    /// Oracle rank-`P` reconstruction of the test cross operator.
    pub oracle: f64,
    /// Reconstruction of the same cross operator from the network's coordinates.
    pub scate: f64,
    /// Best rank-`P` error on the operator matrix itself.
    pub eckart_young_operator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub beta: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
    pub c2_satisfied: bool,
}

impl From<DecayFit> for BetaReport {
    fn from(f: DecayFit) -> Self {
        BetaReport { beta: f.beta, intercept: f.intercept, r2: f.r2, n_points: f.n_points, c2_satisfied: f.beta > 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub distilled_bytes: usize,
    pub base_bytes: usize,
    pub compression_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub seed: u64,
    pub n_train: usize,
    pub n_operator: usize,
    pub base_metric: f64,
    pub distilled_metric: f64,
    pub oracle_metric_at_p: f64,
    pub frobenius_errors: FrobeniusErrors,
    pub beta_fit: Option<BetaReport>,
    pub sizes: Sizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub base_metric: f64,
    pub distilled_metric: f64,
    pub oracle_metric_at_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub task: Task,
    pub metric: String,
    pub base_model: String,
    pub p: usize,
    pub arch: [usize; 2],
    pub runs: Vec<PipelineRun>,
    pub summary: PipelineSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub seed: u64,
    pub base_train_s: f64,
    pub prepare_s: f64,
    pub distill_train_s: f64,
    pub evaluate_s: f64,
}

/// In-memory result of one pipeline seed.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub run: PipelineRun,
    pub model: DistilledModel,
    pub loss_trace: Vec<LossRecord>,
    pub spectrum: Vec<f64>,
    pub fit: Option<DecayFit>,
    pub timings: StageTimings,
}

/// Trains and evaluates the configured architecture for one seed.
pub fn run_pipeline_seed(config: &RunConfig, seed: u64) -> Result<PipelineOutcome> {
    let t0 = Instant::now();
    let prep = prepare(config, seed)?;
    let prepare_s = t0.elapsed().as_secs_f64();
    let p = config.p;
    let decomp_p = prep.decomp.truncated(p);
    let targets = distill::make_targets(&decomp_p, &prep.y_op, p).stage("targets")?;
    let t1 = Instant::now();
    let arch = (config.arch[0], config.arch[1]);
    let hyper = config.hyper(derive_seed(seed, &[Method::Scate.id(), 0]));
    let kind = match config.base.kind {
        BaseKind::Rf => "rf",
        BaseKind::Gbm => "gbm",
    };
    let (model, loss_trace) =
        distill::train_scate(&prep.x_op, &targets, arch, &hyper, prep.task, kind).stage("distill")?;
    let distill_train_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let run = evaluate_distilled(&prep, &decomp_p, &model, p).stage("evaluate")?;
    let evaluate_s = t2.elapsed().as_secs_f64();
    let spectrum: Vec<f64> = prep.decomp.values().iter().take(config.spectrum_rows()).copied().collect();
    let fit = prep.decay_fit(config.spectrum_rows()).ok();
    Ok(PipelineOutcome {
        run: PipelineRun { beta_fit: fit.map(BetaReport::from), ..run },
        model,
        loss_trace,
        spectrum,
        fit,
        timings: StageTimings { seed, base_train_s: prep.base_train_s, prepare_s, distill_train_s, evaluate_s },
    })
}

fn evaluate_distilled(prep: &Prepared, decomp_p: &Decomposition, model: &DistilledModel, p: usize) -> Result<PipelineRun> {
    let test = &prep.test;
    let base_metric = prep.score(test, &prep.base.predict(&test.features)?);
    let distilled_metric = prep.score(test, &model.predict_batch(&test.features)?);
    let cross = prep.cross(&test.features)?;
    let oracle = distill::oracle_eval(decomp_p, &cross, &prep.y_op, p)?;
    let oracle_metric_at_p = prep.score(test, &oracle.predictions);
    let coords = model.coordinates(&test.features)?;
    let scate_err = distill::network_reconstruction_error(decomp_p, &cross, &coords)?;
    let ey = spectral::eckart_young_from_norm(prep.frobenius_norm, prep.decomp.values().as_slice().unwrap(), p);
    let distilled_bytes = model_io::measure_size(model);
    let base_bytes = prep.base.size_bytes();
    Ok(PipelineRun {
        seed: prep.seed,
        n_train: prep.train.n_rows(),
        n_operator: prep.x_op.nrows(),
        base_metric,
        distilled_metric,
        oracle_metric_at_p,
        frobenius_errors: FrobeniusErrors { oracle: oracle.frobenius_error, scate: scate_err, eckart_young_operator: ey },
        beta_fit: None,
        sizes: Sizes { distilled_bytes, base_bytes, compression_factor: base_bytes as f64 / distilled_bytes as f64 },
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";

fn spectrum_label(kind: BaseKind) -> &'static str {
    match kind {
        BaseKind::Rf => "eigenvalue",
        BaseKind::Gbm => "singular_value",
    }
}

pub fn spectrum_file(seed: u64) -> String {
    format!("spectrum_seed{seed}.csv")
}

pub fn loss_file(seed: u64) -> String {
    format!("loss_seed{seed}.csv")
}

pub fn model_file(seed: u64) -> String {
    format!("model_seed{seed}.scte")
}

/// Runs the pipeline for every configured seed and writes the report,
/// per-seed spectrum and loss CSVs, the serialized models, and timings.
pub fn cmd_pipeline(config: &RunConfig) -> Result<PipelineReport> {
    config.validate()?;
    let out = &config.output_dir;
    create_out(out)?;
    write_json(&out.join(CONFIG_ECHO_FILE), config)?;
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    let mut task = Task::Regression;
    for &seed in &config.seeds {
        let o = run_pipeline_seed(config, seed)?;
        task = o.model.task;
        spectral::write_spectrum_csv(
            BufWriter::new(File::create(out.join(spectrum_file(seed)))?),
            spectrum_label(config.base.kind),
            &o.spectrum,
            o.fit.as_ref(),
        )?;
        distill::write_loss_csv(BufWriter::new(File::create(out.join(loss_file(seed)))?), &o.loss_trace)?;
        fs::write(out.join(model_file(seed)), model_io::serialize(&o.model))?;
        runs.push(o.run);
        timings.push(o.timings);
    }
    let summary = PipelineSummary {
        base_metric: mean(runs.iter().map(|r| r.base_metric)),
        distilled_metric: mean(runs.iter().map(|r| r.distilled_metric)),
        oracle_metric_at_p: mean(runs.iter().map(|r| r.oracle_metric_at_p)),
    };
    let report = PipelineReport {
        task,
        metric: metrics::metric_name(task).to_string(),
        base_model: config.base.label(),
        p: config.p,
        arch: config.arch,
        runs,
        summary,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_json(&out.join(TIMING_FILE), &timings)?;
    Ok(report)
}

/// One evaluated `(method, cell, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: Method,
    pub cell: String,
    /// Absent for the oracle, which has no deployable form.
    pub size_bytes: Option<usize>,
    pub metric: f64,
    pub val_metric: f64,
    pub seed: u64,
    pub wall_train_s: f64,
    pub wall_infer_s_per_1k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub method: Method,
    pub cell: String,
    pub seed: u64,
    pub error: String,
}

/// Best cell per `(budget, method)`; `cell == None` means nothing fit the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub budget: usize,
    pub method: Method,
    pub cell: Option<String>,
    pub size_bytes: Option<f64>,
    pub n_seeds: usize,
    pub mean_val_metric: Option<f64>,
    pub mean_metric: Option<f64>,
    pub se_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSeedBest {
    pub budget: usize,
    pub method: Method,
    pub seed: u64,
    pub cell: Option<String>,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: Method,
    pub cell: String,
    pub size_bytes: f64,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub failures: Vec<SweepFailure>,
    pub best: Vec<BestRow>,
    pub per_seed_best: Vec<PerSeedBest>,
    pub pareto: Vec<ParetoPoint>,
}

pub const SWEEP_RECORDS_FILE: &str = "sweep_records.csv";
pub const SWEEP_FAILURES_FILE: &str = "sweep_failures.csv";
pub const BEST_FILE: &str = "best_under_budget.csv";
pub const PER_SEED_BEST_FILE: &str = "best_per_seed.csv";
pub const PARETO_FILE: &str = "pareto.csv";

/// Milliseconds-free wall time of `reps` calls, median in seconds.
fn median_time<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

fn f32_rows(x: &Array2<f64>) -> Vec<Vec<f32>> {
    x.rows().into_iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect()
}

/// Seconds per 1000 single-row predictions, cycling through `rows`.
pub fn time_per_1k<F: Fn(&[f32]) -> f32>(rows: &[Vec<f32>], reps: usize, predict: F) -> f64 {
    median_time(reps, || {
        let mut acc = 0.0f32;
        for i in 0..1000 {
            acc += predict(&rows[i % rows.len()]);
        }
        std::hint::black_box(acc);
    })
}

fn small_rf_grid(config: &RunConfig) -> Vec<(usize, Option<usize>)> {
    config
        .small_rf_estimators
        .iter()
        .flat_map(|&n| config.small_rf_depths.iter().map(move |&d| (n, d)))
        .collect()
}

fn depth_label(d: Option<usize>) -> String {
    d.map_or("none".into(), |v| v.to_string())
}

/// Runs every enabled method on every cell and seed. Cells that fail are
/// listed in the failures and the sweep carries on.
pub fn run_sweep(config: &RunConfig) -> Result<SweepOutput> {
    config.validate()?;
    let max_budget = *config.budgets.last().unwrap();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let enabled = |m: Method| config.methods.contains(&m);
    for &seed in &config.seeds {
        let prep = prepare(config, seed)?;
        let test_rows = f32_rows(&prep.test.features);
        let valid_score = |pred: Array1<f64>| prep.score(&prep.valid, &pred);
        let p = config.p;
        let decomp_p = prep.decomp.truncated(p);
        let d = prep.train.n_features();

        if enabled(Method::Base) {
            let minimal = prep.base.minimal();
            records.push(SweepRecord {
                method: Method::Base,
                cell: config.base.label(),
                size_bytes: Some(prep.base.size_bytes()),
                metric: prep.score(&prep.test, &prep.base.predict(&prep.test.features)?),
                val_metric: valid_score(prep.base.predict(&prep.valid.features)?),
                seed,
                wall_train_s: prep.base_train_s,
                wall_infer_s_per_1k: time_per_1k(&test_rows, 1, |x| minimal.predict(x).unwrap()),
            });
        }
        if enabled(Method::Oracle) {
            let res = (|| -> Result<SweepRecord> {
                let t = Instant::now();
                let cross_test = prep.cross(&prep.test.features)?;
                let cross_val = prep.cross(&prep.valid.features)?;
                let o_test = distill::oracle_eval(&decomp_p, &cross_test, &prep.y_op, p)?;
                let o_val = distill::oracle_eval(&decomp_p, &cross_val, &prep.y_op, p)?;
                Ok(SweepRecord {
                    method: Method::Oracle,
                    cell: format!("p={p}"),
                    size_bytes: None,
                    metric: prep.score(&prep.test, &o_test.predictions),
                    val_metric: prep.score(&prep.valid, &o_val.predictions),
                    seed,
                    wall_train_s: t.elapsed().as_secs_f64(),
                    wall_infer_s_per_1k: f64::NAN,
                })
            })();
            match res {
                Ok(r) => records.push(r),
                Err(e) => failures.push(SweepFailure { method: Method::Oracle, cell: format!("p={p}"), seed, error: e.to_string() }),
            }
        }
        if enabled(Method::Scate) {
            let targets = distill::make_targets(&decomp_p, &prep.y_op, p).stage("targets")?;
            for (idx, (w, dep)) in config.arch_grid().into_iter().enumerate() {
                let cell = format!("w{w}_d{dep}");
                let size = model_io::scte_size(&arch_dims(d, w, dep, p));
                if config.prune_over_budget && size > max_budget {
                    continue;
                }
                let hyper = config.hyper(derive_seed(seed, &[Method::Scate.id(), idx as u64]));
                let t = Instant::now();
                match distill::train_scate(&prep.x_op, &targets, (w, dep), &hyper, prep.task, "scate") {
                    Ok((model, _)) => {
                        let wall_train_s = t.elapsed().as_secs_f64();
                        let compact = CompactModel::from_model(&model);
                        records.push(SweepRecord {
                            method: Method::Scate,
                            cell,
                            size_bytes: Some(model_io::measure_size(&model)),
                            metric: prep.score(&prep.test, &model.predict_batch(&prep.test.features)?),
                            val_metric: valid_score(model.predict_batch(&prep.valid.features)?),
                            seed,
                            wall_train_s,
                            wall_infer_s_per_1k: time_per_1k(&test_rows, 1, |x| compact.predict(x).unwrap()),
                        });
                    }
                    Err(e) => failures.push(SweepFailure { method: Method::Scate, cell, seed, error: e.to_string() }),
                }
            }
        }
        if enabled(Method::NaiveMlp) {
            let teacher = match config.naive_target {
                NaiveTarget::PerTree => prep.base.per_tree(&prep.train.features)?,
                NaiveTarget::Scalar => prep.base.predict(&prep.train.features)?.insert_axis(ndarray::Axis(1)),
            };
            let outs = teacher.ncols();
            for (idx, (w, dep)) in config.arch_grid().into_iter().enumerate() {
                let cell = format!("w{w}_d{dep}");
                let size = model_io::scte_size(&arch_dims(d, w, dep, outs));
                if config.prune_over_budget && size > max_budget {
                    continue;
                }
                let hyper = config.hyper(derive_seed(seed, &[Method::NaiveMlp.id(), idx as u64]));
                let t = Instant::now();
                match distill::naive_mlp_distill(&prep.train.features, &teacher, (w, dep), &hyper, prep.task) {
                    Ok(model) => {
                        let wall_train_s = t.elapsed().as_secs_f64();
                        let compact = CompactModel::from_model(&model);
                        records.push(SweepRecord {
                            method: Method::NaiveMlp,
                            cell,
                            size_bytes: Some(model_io::measure_size(&model)),
                            metric: prep.score(&prep.test, &model.predict_batch(&prep.test.features)?),
                            val_metric: valid_score(model.predict_batch(&prep.valid.features)?),
                            seed,
                            wall_train_s,
                            wall_infer_s_per_1k: time_per_1k(&test_rows, 1, |x| compact.predict(x).unwrap()),
                        });
                    }
                    Err(e) => failures.push(SweepFailure { method: Method::NaiveMlp, cell, seed, error: e.to_string() }),
                }
            }
        }
        if enabled(Method::NaiveRf) {
            for (idx, (n_est, depth)) in small_rf_grid(config).into_iter().enumerate() {
                let cell = format!("n{n_est}_d{}", depth_label(depth));
                let t = Instant::now();
                let res = distill::naive_small_rf(
                    &prep.train,
                    &prep.valid,
                    &[(n_est, depth)],
                    derive_seed(seed, &[Method::NaiveRf.id(), idx as u64]),
                );
                match res {
                    Ok(mut pts) => {
                        let pt = pts.remove(0);
                        let wall_train_s = t.elapsed().as_secs_f64();
                        let minimal = MinimalForest::from_forest(&pt.forest);
                        records.push(SweepRecord {
                            method: Method::NaiveRf,
                            cell,
                            size_bytes: Some(pt.size_bytes),
                            metric: prep.score(&prep.test, &pt.forest.predict_batch(&prep.test.features)?),
                            val_metric: pt.score,
                            seed,
                            wall_train_s,
                            wall_infer_s_per_1k: time_per_1k(&test_rows, 1, |x| minimal.predict(x).unwrap()),
                        });
                    }
                    Err(e) => failures.push(SweepFailure { method: Method::NaiveRf, cell, seed, error: e.to_string() }),
                }
            }
        }
    }
    let best = best_under_budget(&records, &config.budgets);
    let per_seed_best = per_seed_best(&records, &config.budgets);
    let pareto = pareto_frontier(&records);
    Ok(SweepOutput { records, failures, best, per_seed_best, pareto })
}

struct CellStats {
    size: f64,
    n: usize,
    val: f64,
    metric: f64,
    se: f64,
}

// Groups records by (method, cell) and averages over seeds.
fn cell_stats<'a>(records: impl Iterator<Item = &'a SweepRecord>) -> BTreeMap<(Method, String), CellStats> {
    let mut groups: BTreeMap<(Method, String), Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.cell.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let n = rs.len();
            let metric = mean(rs.iter().map(|r| r.metric));
            let var = if n > 1 { rs.iter().map(|r| (r.metric - metric).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            let stats = CellStats {
                size: mean(rs.iter().map(|r| r.size_bytes.map_or(f64::NAN, |s| s as f64))),
                n,
                val: mean(rs.iter().map(|r| r.val_metric)),
                metric,
                se: (var / n as f64).sqrt(),
            };
            (k, stats)
        })
        .collect()
}

/// For each budget and method: among records no larger than the budget,
/// average each cell over seeds, pick the cell with the best mean validation
/// metric and report its mean test metric. Methods without a deployable size
/// are skipped.
pub fn best_under_budget(records: &[SweepRecord], budgets: &[usize]) -> Vec<BestRow> {
    let mut methods: Vec<Method> = records.iter().filter(|r| r.size_bytes.is_some()).map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    for &budget in budgets {
        let fitting = records.iter().filter(|r| r.size_bytes.is_some_and(|s| s <= budget));
        let stats = cell_stats(fitting);
        for &method in &methods {
            let best = stats
                .iter()
                .filter(|((m, _), _)| *m == method)
                .max_by(|a, b| a.1.val.partial_cmp(&b.1.val).unwrap_or(std::cmp::Ordering::Equal));
            out.push(match best {
                Some(((_, cell), s)) => BestRow {
                    budget,
                    method,
                    cell: Some(cell.clone()),
                    size_bytes: Some(s.size),
                    n_seeds: s.n,
                    mean_val_metric: Some(s.val),
                    mean_metric: Some(s.metric),
                    se_metric: Some(s.se),
                },
                None => BestRow {
                    budget,
                    method,
                    cell: None,
                    size_bytes: None,
                    n_seeds: 0,
                    mean_val_metric: None,
                    mean_metric: None,
                    se_metric: None,
                },
            });
        }
    }
    out
}

/// Best-by-validation record per `(budget, method, seed)`.
pub fn per_seed_best(records: &[SweepRecord], budgets: &[usize]) -> Vec<PerSeedBest> {
    let mut keys: Vec<(Method, u64)> =
        records.iter().filter(|r| r.size_bytes.is_some()).map(|r| (r.method, r.seed)).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for &budget in budgets {
        for &(method, seed) in &keys {
            let best = records
                .iter()
                .filter(|r| r.method == method && r.seed == seed && r.size_bytes.is_some_and(|s| s <= budget))
                .max_by(|a, b| a.val_metric.partial_cmp(&b.val_metric).unwrap_or(std::cmp::Ordering::Equal));
            out.push(PerSeedBest {
                budget,
                method,
                seed,
                cell: best.map(|r| r.cell.clone()),
                metric: best.map(|r| r.metric),
            });
        }
    }
    out
}

/// Per method, the cells (seed-averaged) not dominated in (smaller size, higher metric).
pub fn pareto_frontier(records: &[SweepRecord]) -> Vec<ParetoPoint> {
    let stats = cell_stats(records.iter().filter(|r| r.size_bytes.is_some()));
    let points: Vec<ParetoPoint> = stats
        .into_iter()
        .filter(|(_, s)| s.metric.is_finite())
        .map(|((method, cell), s)| ParetoPoint { method, cell, size_bytes: s.size, mean_metric: s.metric })
        .collect();
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .filter(|a| {
            !points.iter().any(|b| {
                b.method == a.method
                    && b.size_bytes <= a.size_bytes
                    && b.mean_metric >= a.mean_metric
                    && (b.size_bytes < a.size_bytes || b.mean_metric > a.mean_metric)
            })
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.size_bytes.partial_cmp(&b.size_bytes).unwrap()));
    out
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("NA".to_string(), |x| x.to_string())
}

pub fn write_records_csv<W: Write>(w: W, records: &[SweepRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "cell", "size_bytes", "metric", "val_metric", "seed", "wall_train_s", "wall_infer_s_per_1k"])?;
    for r in records {
        wr.write_record([
            r.method.name().to_string(),
            r.cell.clone(),
            r.size_bytes.map_or(String::new(), |s| s.to_string()),
            r.metric.to_string(),
            r.val_metric.to_string(),
            r.seed.to_string(),
            r.wall_train_s.to_string(),
            r.wall_infer_s_per_1k.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let parse_f = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|e| ScateError::ParseError { row: out.len() + 1, col: i, msg: format!("{e}") })
        };
        let method = match &row[0] {
            "scate" => Method::Scate,
            "naive_mlp" => Method::NaiveMlp,
            "naive_rf" => Method::NaiveRf,
            "oracle" => Method::Oracle,
            "base" => Method::Base,
            m => return Err(ScateError::ParseError { row: out.len() + 1, col: 0, msg: format!("unknown method {m}") }),
        };
        let size_bytes = if row[2].is_empty() {
            None
        } else {
            Some(row[2].parse().map_err(|e| ScateError::ParseError { row: out.len() + 1, col: 2, msg: format!("{e}") })?)
        };
        out.push(SweepRecord {
            method,
            cell: row[1].to_string(),
            size_bytes,
            metric: parse_f(3)?,
            val_metric: parse_f(4)?,
            seed: row[5].parse().map_err(|e| ScateError::ParseError { row: out.len() + 1, col: 5, msg: format!("{e}") })?,
            wall_train_s: parse_f(6)?,
            wall_infer_s_per_1k: parse_f(7)?,
        });
    }
    Ok(out)
}

pub fn write_best_csv<W: Write>(w: W, rows: &[BestRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["budget", "method", "cell", "size_bytes", "n_seeds", "mean_val_metric", "mean_metric", "se_metric"])?;
    for r in rows {
        wr.write_record([
            r.budget.to_string(),
            r.method.name().to_string(),
            opt_str(&r.cell),
            opt_str(&r.size_bytes),
            r.n_seeds.to_string(),
            opt_str(&r.mean_val_metric),
            opt_str(&r.mean_metric),
            opt_str(&r.se_metric),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn write_per_seed_csv<W: Write>(w: W, rows: &[PerSeedBest]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["budget", "method", "seed", "cell", "metric"])?;
    for r in rows {
        wr.write_record([r.budget.to_string(), r.method.name().to_string(), r.seed.to_string(), opt_str(&r.cell), opt_str(&r.metric)])?;
    }
    wr.flush()?;
    Ok(())
}

fn write_pareto_csv<W: Write>(w: W, rows: &[ParetoPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "cell", "size_bytes", "mean_metric"])?;
    for r in rows {
        wr.write_record([r.method.name().to_string(), r.cell.clone(), r.size_bytes.to_string(), r.mean_metric.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

fn write_failures_csv<W: Write>(w: W, rows: &[SweepFailure]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "cell", "seed", "error"])?;
    for r in rows {
        wr.write_record([r.method.name().to_string(), r.cell.clone(), r.seed.to_string(), r.error.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Runs the sweep and writes records, failures, best-under-budget, per-seed bests and the Pareto frontier.
pub fn cmd_sweep(config: &RunConfig) -> Result<SweepOutput> {
    let out = run_sweep(config)?;
    let dir = &config.output_dir;
    create_out(dir)?;
    write_json(&dir.join(CONFIG_ECHO_FILE), config)?;
    write_records_csv(File::create(dir.join(SWEEP_RECORDS_FILE))?, &out.records)?;
    write_failures_csv(File::create(dir.join(SWEEP_FAILURES_FILE))?, &out.failures)?;
    write_best_csv(File::create(dir.join(BEST_FILE))?, &out.best)?;
    write_per_seed_csv(File::create(dir.join(PER_SEED_BEST_FILE))?, &out.per_seed_best)?;
    write_pareto_csv(File::create(dir.join(PARETO_FILE))?, &out.pareto)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub kind: String,
    pub values: Vec<f64>,
    pub fit: Option<BetaReport>,
}

pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const SPECTRUM_FIT_FILE: &str = "spectrum_fit.json";

/// Top `min(100, len)` values with their decay fit (when at least three are positive).
pub fn spectrum_from_values(kind: &str, values: &[f64], top: usize) -> SpectrumSummary {
    let top = top.min(100).min(values.len());
    let values = values[..top].to_vec();
    let fit = spectral::decay_fit(&values, top).ok().map(BetaReport::from);
    SpectrumSummary { kind: kind.to_string(), values, fit }
}

/// Spectrum of a square operator matrix: eigenvalues when symmetric, singular values otherwise.
pub fn spectrum_from_matrix(m: &Array2<f64>, top: usize, seed: u64) -> Result<SpectrumSummary> {
    let n = m.nrows();
    match spectral::eig_sym(m, None) {
        Ok(e) => Ok(spectrum_from_values("eigenvalue", e.eigenvalues.as_slice().unwrap(), top)),
        Err(ScateError::NotSymmetric(_)) => {
            let rank = top.min(100).min(n.min(m.ncols()));
            let t = spectral::svd_trunc(m, rank, 10, 4, seed)?;
            Ok(spectrum_from_values("singular_value", t.sigma.as_slice().unwrap(), top))
        }
        Err(e) => Err(e),
    }
}

pub fn write_spectrum_outputs(dir: &Path, s: &SpectrumSummary) -> Result<()> {
    create_out(dir)?;
    let fit = s.fit.as_ref().map(|b| DecayFit { beta: b.beta, intercept: b.intercept, r2: b.r2, n_points: b.n_points });
    spectral::write_spectrum_csv(BufWriter::new(File::create(dir.join(SPECTRUM_FILE))?), &s.kind, &s.values, fit.as_ref())?;
    write_json(&dir.join(SPECTRUM_FIT_FILE), s)
}

/// Builds the operator for the first seed and reports its spectrum.
pub fn cmd_spectrum(config: &RunConfig) -> Result<SpectrumSummary> {
    let seed = config.seeds[0];
    let prep = prepare(config, seed)?;
    let kind = match prep.decomp {
        Decomposition::Eigen(_) => "eigenvalue",
        Decomposition::Svd(_) => "singular_value",
    };
    let s = spectrum_from_values(kind, prep.decomp.values().as_slice().unwrap(), config.spectrum_rows());
    write_spectrum_outputs(&config.output_dir, &s)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub cell: String,
    pub size_bytes: usize,
    /// Lower edge of the 5 KB bucket the size falls in, in KB.
    pub size_bucket_kb: usize,
    pub train_s: f64,
    pub infer_s_per_1k: f64,
    pub repetitions: usize,
}

pub const TIMING_CSV_FILE: &str = "timing.csv";
pub const SIZE_BUCKET_BYTES: usize = 5120;

fn bucket_kb(size: usize) -> usize {
    size / SIZE_BUCKET_BYTES * 5
}

/// Median-of-`bench_repetitions` training and per-1000-prediction inference
/// times for the base ensemble, the distilled networks and the small forests
/// of the first seed.
pub fn run_bench(config: &RunConfig) -> Result<Vec<TimingRow>> {
    config.validate()?;
    let reps = config.bench_repetitions;
    let seed = config.seeds[0];
    let prep = prepare(config, seed)?;
    let rows = f32_rows(&prep.test.features);
    let max_budget = *config.budgets.last().unwrap();
    let mut out = Vec::new();
    let enabled = |m: Method| config.methods.contains(&m);

    if enabled(Method::Base) {
        let mut model = None;
        let train_s = median_time(reps, || {
            model = Some(fit_base(&config.base, &prep.train, derive_seed(seed, &[12])));
        });
        let model = model.unwrap()?;
        let minimal = model.minimal();
        let size = model.size_bytes();
        out.push(TimingRow {
            method: Method::Base,
            cell: config.base.label(),
            size_bytes: size,
            size_bucket_kb: bucket_kb(size),
            train_s,
            infer_s_per_1k: time_per_1k(&rows, reps, |x| minimal.predict(x).unwrap()),
            repetitions: reps,
        });
    }
    if enabled(Method::Scate) {
        let p = config.p;
        let targets = distill::make_targets(&prep.decomp.truncated(p), &prep.y_op, p)?;
        for (idx, (w, d)) in config.arch_grid().into_iter().enumerate() {
            let size = model_io::scte_size(&arch_dims(prep.train.n_features(), w, d, p));
            if config.prune_over_budget && size > max_budget {
                continue;
            }
            let hyper = config.hyper(derive_seed(seed, &[Method::Scate.id(), idx as u64]));
            let mut model = None;
            let train_s = median_time(reps, || {
                model = Some(distill::train_scate(&prep.x_op, &targets, (w, d), &hyper, prep.task, "scate"));
            });
            let (model, _) = model.unwrap()?;
            let compact = CompactModel::from_model(&model);
            out.push(TimingRow {
                method: Method::Scate,
                cell: format!("w{w}_d{d}"),
                size_bytes: size,
                size_bucket_kb: bucket_kb(size),
                train_s,
                infer_s_per_1k: time_per_1k(&rows, reps, |x| compact.predict(x).unwrap()),
                repetitions: reps,
            });
        }
    }
    if enabled(Method::NaiveRf) {
        for (idx, (n_est, depth)) in small_rf_grid(config).into_iter().enumerate() {
            let mut pts = None;
            let train_s = median_time(reps, || {
                pts = Some(distill::naive_small_rf(
                    &prep.train,
                    &prep.valid,
                    &[(n_est, depth)],
                    derive_seed(seed, &[Method::NaiveRf.id(), idx as u64]),
                ));
            });
            let pt = pts.unwrap()?.remove(0);
            let minimal = MinimalForest::from_forest(&pt.forest);
            out.push(TimingRow {
                method: Method::NaiveRf,
                cell: format!("n{n_est}_d{}", depth_label(depth)),
                size_bytes: pt.size_bytes,
                size_bucket_kb: bucket_kb(pt.size_bytes),
                train_s,
                infer_s_per_1k: time_per_1k(&rows, reps, |x| minimal.predict(x).unwrap()),
                repetitions: reps,
            });
        }
    }
    Ok(out)
}

pub fn write_timing_csv<W: Write>(w: W, rows: &[TimingRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "cell", "size_bytes", "size_bucket_kb", "train_s", "infer_s_per_1k", "repetitions"])?;
    for r in rows {
        wr.write_record([
            r.method.name().to_string(),
            r.cell.clone(),
            r.size_bytes.to_string(),
            r.size_bucket_kb.to_string(),
            r.train_s.to_string(),
            r.infer_s_per_1k.to_string(),
            r.repetitions.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn cmd_bench_time(config: &RunConfig) -> Result<Vec<TimingRow>> {
    let rows = run_bench(config)?;
    create_out(&config.output_dir)?;
    write_timing_csv(File::create(config.output_dir.join(TIMING_CSV_FILE))?, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: Method, cell: &str, size: Option<usize>, metric: f64, val: f64, seed: u64) -> SweepRecord {
        SweepRecord {
            method,
            cell: cell.into(),
            size_bytes: size,
            metric,
            val_metric: val,
            seed,
            wall_train_s: 0.0,
            wall_infer_s_per_1k: 0.0,
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.budgets, vec![10240, 102400]);
        assert_eq!(c.base.n_trees(), 250);
        assert_eq!(c.base.depth(), Some(15));
        let g = BaseModelConfig { kind: BaseKind::Gbm, ..Default::default() };
        assert_eq!((g.n_trees(), g.depth()), (100, Some(6)));
        let bad = RunConfig { budgets: vec![102400, 10240], ..RunConfig::default() };
        assert!(bad.validate().unwrap_err().is_config());
        let bad = RunConfig { p: 0, ..RunConfig::default() };
        assert!(bad.validate().unwrap_err().is_config());
        assert!(RunConfig::from_json_str("{\"p\": \"x\"}").unwrap_err().is_config());
        let c = RunConfig::from_json_str("{\"p\": 7, \"base\": {\"kind\": \"gbm\"}}").unwrap();
        assert_eq!(c.p, 7);
        assert_eq!(c.base.kind, BaseKind::Gbm);
        assert_eq!(c.epochs, 200);
    }

    #[test]
    fn best_and_na() {
        let rs = vec![
            rec(Method::Scate, "a", Some(100), 0.5, 0.6, 0),
            rec(Method::Scate, "a", Some(100), 0.7, 0.6, 1),
            rec(Method::Scate, "b", Some(300), 0.9, 0.9, 0),
            rec(Method::Oracle, "p", None, 0.95, 0.95, 0),
        ];
        let best = best_under_budget(&rs, &[50, 200, 400]);
        assert_eq!(best.len(), 3);
        assert!(best[0].cell.is_none());
        assert_eq!(best[1].cell.as_deref(), Some("a"));
        assert!((best[1].mean_metric.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(best[2].cell.as_deref(), Some("b"));
        for b in &best {
            if let Some(s) = b.size_bytes {
                assert!(s <= b.budget as f64);
            }
        }
    }

    #[test]
    fn pareto_has_no_dominated_points() {
        let rs = vec![
            rec(Method::Scate, "a", Some(100), 0.5, 0.0, 0),
            rec(Method::Scate, "b", Some(200), 0.4, 0.0, 0),
            rec(Method::Scate, "c", Some(300), 0.8, 0.0, 0),
            rec(Method::NaiveRf, "d", Some(50), 0.1, 0.0, 0),
        ];
        let f = pareto_frontier(&rs);
        let cells: Vec<&str> = f.iter().map(|p| p.cell.as_str()).collect();
        assert_eq!(cells, vec!["a", "c", "d"]);
    }

    #[test]
    fn records_csv_round_trip() {
        let rs = vec![rec(Method::Scate, "w4_d1", Some(1234), 0.75, 0.7, 3), rec(Method::Oracle, "p=5", None, 0.8, 0.81, 3)];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &rs).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn spectrum_rules() {
        let planted: Vec<f64> = (1..=200).map(|i| (i as f64).powi(-2)).collect();
        let s = spectrum_from_values("eigenvalue", &planted, 500);
        assert_eq!(s.values.len(), 100);
        let fit = s.fit.unwrap();
        assert!((fit.beta - 2.0).abs() < 1e-12 && fit.c2_satisfied);
        let id = spectrum_from_matrix(&Array2::eye(30), 100, 0).unwrap();
        let fit = id.fit.unwrap();
        assert!(fit.beta.abs() < 1e-12 && !fit.c2_satisfied);
    }
}
