//! Spectral distillation: targets and coefficients from a decomposition, the
//! weighted objective with a Gram-orthogonality penalty, the training loop,
//! the least-squares oracle, and the naive baselines.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cart::TreeParams;
use crate::data::{Dataset, ScalingStats, Task};
use crate::ensemble::{fit_rf, Forest, ForestParams};
use crate::error::{Result, ScateError};
use crate::metrics;
use crate::mlp::{self, adam_step, arch_dims, backward, forward, init_mlp, AdamState, Mlp};
use crate::model_io;
use crate::rng::{derive_seed, rng_from_seed, shuffle};
use crate::spectral::Decomposition;

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTargets {
    /// `N x P`: eigenvector (or left singular vector) entries on the training rows.
    pub targets: Array2<f64>,
    /// Squared spectral values scaled so the largest is 1.
    pub weights: Array1<f64>,
    pub coefficients: Array1<f64>,
    /// The top `P` eigenvalues or singular values.
    pub values: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_kind: String,
    pub seed: u64,
    pub gamma: f64,
    pub epochs: usize,
}

/// A network and the fixed coefficients that turn its outputs into a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledModel {
    pub mlp: Mlp,
    pub coefficients: Array1<f64>,
    pub scaling: ScalingStats,
    pub task: Task,
    pub p: usize,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub gamma: f64,
    pub lr: f64,
    pub seed: u64,
    /// Rows per Adam step, reshuffled every epoch; `None` trains full batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { epochs: 200, gamma: 0.001, lr: 1e-3, seed: 0, batch_size: Some(DEFAULT_BATCH_SIZE) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub weighted_mse: f64,
    pub ortho_penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub weighted_mse: f64,
    pub ortho_penalty: f64,
    pub total: f64,
}

/// Targets, loss weights and coefficients for the top `p` components.
///
/// The coefficient of component `j` is its spectral value times the
/// projection of `y` on the matching right vector.
pub fn make_targets(decomp: &Decomposition, y: &[f64], p: usize) -> Result<SpectralTargets> {
    let rank = decomp.rank();
    if p > rank {
        return Err(ScateError::RankTooLarge { requested: p, available: rank });
    }
    let right = decomp.right();
    if right.nrows() != y.len() {
        return Err(ScateError::DimensionMismatch { expected: right.nrows(), got: y.len() });
    }
    let values = decomp.values().slice(s![..p]).to_owned();
    let y = ndarray::ArrayView1::from(y);
    let proj = right.slice(s![.., ..p]).t().dot(&y);
    let coefficients = &values * &proj;
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let top = sq.iter().copied().fold(0.0f64, f64::max);
    let mut weights = Array1::zeros(p);
    let mut running = f64::INFINITY;
    for (j, w) in sq.iter().enumerate() {
        let scaled = if top > 0.0 { w / top } else { 1.0 };
        running = running.min(scaled).max(f64::MIN_POSITIVE);
        weights[j] = running;
    }
    Ok(SpectralTargets {
        targets: decomp.left().slice(s![.., ..p]).to_owned(),
        weights,
        coefficients,
        values,
    })
}

/// Weighted MSE over rows plus `gamma * sum_{j != k} G_jk^2` with
/// `G = preds^T preds / N`. Returns the loss and its gradient in `preds`.
pub fn scate_loss(
    preds: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    weights: &[f64],
    gamma: f64,
) -> Result<(LossValue, Array2<f64>)> {
    if preds.dim() != targets.dim() || preds.ncols() != weights.len() {
        return Err(ScateError::ShapeMismatch(format!(
            "preds {:?}, targets {:?}, weights {}",
            preds.dim(),
            targets.dim(),
            weights.len()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(ScateError::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let n = preds.nrows() as f64;
    let p = preds.ncols();
    let mut grad = Array2::zeros(preds.raw_dim());
    let mut mse = 0.0;
    for ((g, (&a, &t)), j) in grad
        .iter_mut()
        .zip(preds.iter().zip(targets.iter()))
        .zip((0..preds.nrows()).flat_map(|_| 0..p))
    {
        let r = a - t;
        mse += weights[j] * r * r;
        *g = 2.0 * weights[j] * r / n;
    }
    mse /= n;
    let mut ortho = 0.0;
    if gamma > 0.0 {
        let mut gram = preds.t().dot(preds) / n;
        for j in 0..p {
            gram[[j, j]] = 0.0;
        }
        ortho = gram.iter().map(|v| v * v).sum::<f64>();
        grad.scaled_add(4.0 * gamma / n, &preds.dot(&gram));
    }
    Ok((LossValue { weighted_mse: mse, ortho_penalty: ortho, total: mse + gamma * ortho }, grad))
}

fn check_rows(x: &Array2<f64>, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(ScateError::DimensionMismatch { expected: n, got: x.nrows() });
    }
    Ok(())
}

/// Core optimizer loop shared by SCATE and the naive network baseline.
fn fit_network(
    xs: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &[f64],
    dims: &[usize],
    hyper: &TrainHyper,
) -> Result<(Mlp, Vec<LossRecord>)> {
    if hyper.epochs == 0 {
        return Err(ScateError::InvalidParameter("epochs must be >= 1".into()));
    }
    if !(hyper.lr > 0.0) {
        return Err(ScateError::InvalidParameter(format!("learning rate must be > 0, got {}", hyper.lr)));
    }
    let n = xs.nrows();
    let mut net = init_mlp(dims, derive_seed(hyper.seed, &[0]))?;
    let mut adam = AdamState::new(&net, hyper.lr);
    let batch = match hyper.batch_size {
        Some(b) if b > 0 => b.min(n),
        Some(_) => return Err(ScateError::InvalidParameter("batch size must be >= 1".into())),
        None => n,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(hyper.seed, &[1]));
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        if batch < n {
            shuffle(&mut rng, &mut order);
            for chunk in order.chunks(batch) {
                let xb = xs.select(Axis(0), chunk);
                let tb = targets.select(Axis(0), chunk);
                step(&mut net, &mut adam, &xb.view(), &tb.view(), weights, hyper.gamma)?;
            }
        } else {
            step(&mut net, &mut adam, &xs.view(), &targets.view(), weights, hyper.gamma)?;
        }
        let out = forward(&net, &xs.view())?;
        let (lv, _) = scate_loss(&out.view(), &targets.view(), weights, hyper.gamma)?;
        trace.push(LossRecord {
            epoch: epoch + 1,
            weighted_mse: lv.weighted_mse,
            ortho_penalty: lv.ortho_penalty,
            total: lv.total,
        });
    }
    Ok((net, trace))
}

fn step(
    net: &mut Mlp,
    adam: &mut AdamState,
    x: &ArrayView2<f64>,
    t: &ArrayView2<f64>,
    weights: &[f64],
    gamma: f64,
) -> Result<()> {
    let out = forward(net, x)?;
    let (_, g_out) = scate_loss(&out.view(), t, weights, gamma)?;
    let grads = backward(net, x, &g_out.view())?;
    adam_step(net, &grads, adam)
}

/// Trains a `[d, width x depth, P]` network on the spectral targets. Features
/// are standardized with statistics fit on `x_train`, which the model keeps.
pub fn train_scate(
    x_train: &Array2<f64>,
    targets: &SpectralTargets,
    arch: (usize, usize),
    hyper: &TrainHyper,
    task: Task,
    base_kind: &str,
) -> Result<(DistilledModel, Vec<LossRecord>)> {
    check_rows(x_train, targets.targets.nrows())?;
    let scaling = ScalingStats::fit(x_train);
    let xs = scaling.apply(x_train)?;
    let p = targets.targets.ncols();
    let dims = arch_dims(x_train.ncols(), arch.0, arch.1, p);
    let weights = targets.weights.to_vec();
    let (net, trace) = fit_network(&xs, &targets.targets, &weights, &dims, hyper)?;
    let model = DistilledModel {
        mlp: net,
        coefficients: targets.coefficients.clone(),
        scaling,
        task,
        p,
        provenance: Some(Provenance {
            base_kind: base_kind.to_string(),
            seed: hyper.seed,
            gamma: hyper.gamma,
            epochs: hyper.epochs,
        }),
    };
    Ok((model, trace))
}

impl DistilledModel {
    /// Network outputs (estimated spectral coordinates) for raw feature rows.
    pub fn coordinates(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let xs = self.scaling.apply(x).map_err(|_| ScateError::DimensionMismatch {
            expected: self.scaling.dim(),
            got: x.ncols(),
        })?;
        forward(&self.mlp, &xs.view())
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.coordinates(x)?.dot(&self.coefficients))
    }

    pub fn size_bytes(&self) -> usize {
        model_io::scte_size(&self.mlp.layer_dims)
    }
}

/// Standardize, run the network, contract with the coefficients.
pub fn predict_distilled(model: &DistilledModel, x: &[f64]) -> Result<f64> {
    let d = model.scaling.dim();
    if x.len() != d {
        return Err(ScateError::DimensionMismatch { expected: d, got: x.len() });
    }
    let mut xs = vec![0.0; d];
    model.scaling.apply_row(x, &mut xs);
    let out = model.mlp.forward_row(&xs)?;
    Ok(out.iter().zip(model.coefficients.iter()).map(|(a, c)| a * c).sum())
}

/// Thresholded label for binary classification models (`1` when the value is at least 0.5).
pub fn predict_label(model: &DistilledModel, x: &[f64]) -> Result<f64> {
    Ok(metrics::label(predict_distilled(model, x)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub frobenius_error: f64,
    pub predictions: Array1<f64>,
    /// The rank-`P` reconstruction of the cross operator.
    pub reconstruction: Array2<f64>,
}

/// Best rank-`P` reconstruction of the cross operator in the span of the top
/// `P` right vectors: `K_cross V_P V_P^T`, skipping components whose value is
/// at most `1e-12` of the leading one.
pub fn oracle_eval(decomp: &Decomposition, k_cross: &Array2<f64>, y: &[f64], p: usize) -> Result<OracleResult> {
    let rank = decomp.rank();
    if p > rank {
        return Err(ScateError::RankTooLarge { requested: p, available: rank });
    }
    let right = decomp.right();
    if k_cross.ncols() != right.nrows() {
        return Err(ScateError::DimensionMismatch { expected: right.nrows(), got: k_cross.ncols() });
    }
    if y.len() != right.nrows() {
        return Err(ScateError::DimensionMismatch { expected: right.nrows(), got: y.len() });
    }
    let values = decomp.values();
    let lead = values.first().map(|v| v.abs()).unwrap_or(0.0);
    let keep: Vec<usize> = (0..p).filter(|&j| values[j].abs() > 1e-12 * lead).collect();
    let v = right.select(Axis(1), &keep);
    let w = k_cross.dot(&v);
    let reconstruction = w.dot(&v.t());
    let frobenius_error = (k_cross - &reconstruction).iter().map(|e| e * e).sum::<f64>().sqrt();
    let predictions = reconstruction.dot(&ndarray::ArrayView1::from(y));
    Ok(OracleResult { frobenius_error, predictions, reconstruction })
}

/// `||K_cross - coords diag(values_P) V_P^T||_F` for network coordinates on the query rows.
pub fn network_reconstruction_error(decomp: &Decomposition, k_cross: &Array2<f64>, coords: &Array2<f64>) -> Result<f64> {
    let p = coords.ncols();
    if p > decomp.rank() {
        return Err(ScateError::RankTooLarge { requested: p, available: decomp.rank() });
    }
    if coords.nrows() != k_cross.nrows() {
        return Err(ScateError::DimensionMismatch { expected: k_cross.nrows(), got: coords.nrows() });
    }
    let scaled = coords * &decomp.values().slice(s![..p]);
    let recon = scaled.dot(&decomp.right().slice(s![.., ..p]).t());
    Ok((k_cross - &recon).iter().map(|e| e * e).sum::<f64>().sqrt())
}

/// Network trained directly on teacher outputs: one output per teacher column
/// (per tree, or a single scalar column), uniform weights, no penalty. The
/// prediction is the mean of the outputs.
pub fn naive_mlp_distill(
    x_train: &Array2<f64>,
    teacher: &Array2<f64>,
    arch: (usize, usize),
    hyper: &TrainHyper,
    task: Task,
) -> Result<DistilledModel> {
    check_rows(x_train, teacher.nrows())?;
    let b = teacher.ncols();
    if b == 0 {
        return Err(ScateError::ShapeMismatch("teacher has no outputs".into()));
    }
    let scaling = ScalingStats::fit(x_train);
    let xs = scaling.apply(x_train)?;
    let dims = arch_dims(x_train.ncols(), arch.0, arch.1, b);
    let hyper = TrainHyper { gamma: 0.0, ..*hyper };
    let (net, _) = fit_network(&xs, teacher, &vec![1.0; b], &dims, &hyper)?;
    Ok(DistilledModel {
        mlp: net,
        coefficients: Array1::from_elem(b, 1.0 / b as f64),
        scaling,
        task,
        p: b,
        provenance: Some(Provenance { base_kind: "naive_mlp".into(), seed: hyper.seed, gamma: 0.0, epochs: hyper.epochs }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallForestPoint {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub forest: Forest,
    pub size_bytes: usize,
    pub score: f64,
}

pub const SMALL_RF_ESTIMATORS: [usize; 5] = [10, 50, 100, 200, 500];
pub const SMALL_RF_DEPTHS: [Option<usize>; 8] = [Some(3), Some(4), Some(5), Some(6), Some(7), Some(8), Some(9), None];

/// Fits one forest per `(n_estimators, max_depth)` cell and scores it on `valid`.
pub fn naive_small_rf(
    train: &Dataset,
    valid: &Dataset,
    grid: &[(usize, Option<usize>)],
    seed: u64,
) -> Result<Vec<SmallForestPoint>> {
    grid.iter()
        .enumerate()
        .map(|(cell, &(n_estimators, max_depth))| {
            let params = ForestParams {
                n_trees: n_estimators,
                tree: TreeParams { max_depth, ..TreeParams::default() },
                seed: derive_seed(seed, &[cell as u64]),
            };
            let forest = fit_rf(train, &params)?;
            let pred = forest.predict_batch(&valid.features)?;
            let score = metrics::score(
                valid.task,
                valid.target.as_slice().expect("contiguous"),
                pred.as_slice().expect("contiguous"),
            );
            let size_bytes = model_io::forest_size(&forest.trees);
            Ok(SmallForestPoint { n_estimators, max_depth, forest, size_bytes, score })
        })
        .collect()
}

pub fn write_loss_csv<W: Write>(mut w: W, trace: &[LossRecord]) -> Result<()> {
    writeln!(w, "epoch,weighted_mse,ortho_penalty,total")?;
    for r in trace {
        writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.weighted_mse, r.ortho_penalty, r.total)?;
    }
    Ok(())
}

pub fn read_loss_csv<R: BufRead>(r: R) -> Result<Vec<LossRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Parameter count helper re-exported for size planning.
pub fn network_params(d: usize, width: usize, depth: usize, p: usize) -> usize {
    mlp::param_count(&arch_dims(d, width, depth, p))
}
