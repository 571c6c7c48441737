//! The linear smoothers behind tree ensembles.
//!
//! A random forest predicts `f(x) = k(x, ·) y` with the tree-averaged,
//! leaf-count-normalized co-membership kernel `k`; on training rows this gives
//! the symmetric, doubly stochastic matrix `K`. A boosted ensemble is also a
//! linear smoother, but its weights follow a per-round recursion
//!
//! ```text
//! s_b(x) = s_{b-1}(x) + eta * (s_tree,b(x) - e_b(x) R_b),
//! ```
//!
//! where row `l` of `R_b` averages `s_{b-1}` over the training rows in leaf `l`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::cart::{self, Tree};
use crate::ensemble::{Forest, GbmModel};
use crate::error::{Result, ScateError};
use crate::rng::{self, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub n: usize,
    pub forest_ref: String,
}

/// Largest deviation from each structural property of an RF kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDiagnostics {
    pub max_asymmetry: f64,
    pub max_row_sum_error: f64,
    pub max_col_sum_error: f64,
    pub min_entry: f64,
    pub max_entry: f64,
}

impl KernelMatrix {
    pub fn diagnostics(&self) -> KernelDiagnostics {
        let k = &self.values;
        let n = self.n;
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((k[[i, j]] - k[[j, i]]).abs());
            }
        }
        let row_err = k.sum_axis(Axis(1)).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        let col_err = k.sum_axis(Axis(0)).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        KernelDiagnostics {
            max_asymmetry: asym,
            max_row_sum_error: row_err,
            max_col_sum_error: col_err,
            min_entry: k.iter().copied().fold(f64::INFINITY, f64::min),
            max_entry: k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ScateError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// One tree's kernel view: for every node that serves as a leaf's support,
/// the normalization rows routed through it.
struct TreeBuckets {
    /// For each node: the support node a point ending in it uses.
    support: Vec<usize>,
    /// For each node: normalization rows under it (only filled for support nodes).
    members: Vec<Vec<usize>>,
}

impl TreeBuckets {
    fn new(tree: &Tree, x: &Array2<f64>, norm_rows: Option<&[usize]>) -> Self {
        let rows: Vec<usize> = match norm_rows {
            Some(r) => r.to_vec(),
            None => (0..x.nrows()).collect(),
        };
        let xs = x.select(Axis(0), &rows);
        let zeros = vec![0.0; rows.len()];
        let (count, _) = cart::node_label_totals(tree, &xs, &zeros);
        let support = cart::support_nodes(tree, &count);
        let mut is_support = vec![false; tree.n_nodes()];
        for i in 0..tree.n_nodes() {
            if tree.is_leaf(i) {
                is_support[support[i]] = true;
            }
        }
        let mut members = vec![Vec::new(); tree.n_nodes()];
        for (pos, &row) in rows.iter().enumerate() {
            let x_row = xs.row(pos).to_vec();
            let mut node = 0usize;
            loop {
                if is_support[node] {
                    members[node].push(row);
                }
                if tree.is_leaf(node) {
                    break;
                }
                let f = tree.feature[node] as usize;
                node = if x_row[f] <= tree.threshold[node] {
                    tree.left[node] as usize
                } else {
                    tree.right[node] as usize
                };
            }
        }
        TreeBuckets { support, members }
    }

    #[inline]
    fn bucket_of(&self, tree: &Tree, x: &[f64]) -> &[usize] {
        &self.members[self.support[tree.leaf_of(x)]]
    }
}

fn forest_buckets(forest: &Forest, x_train: &Array2<f64>) -> Result<Vec<TreeBuckets>> {
    check_dim(forest.n_features(), x_train.ncols())?;
    if forest.label_row_sets.is_some() && x_train.nrows() != forest.n_train {
        return Err(ScateError::ModelDataMismatch(format!(
            "honest forest was trained on {} rows, got {}",
            forest.n_train,
            x_train.nrows()
        )));
    }
    Ok(forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(b, t)| TreeBuckets::new(t, x_train, forest.normalization_rows(b)))
        .collect())
}

fn kernel_rows(forest: &Forest, buckets: &[TreeBuckets], x_query: &Array2<f64>, n: usize) -> Array2<f64> {
    let b_count = forest.trees.len() as f64;
    let mut out = Array2::zeros((x_query.nrows(), n));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x_query.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut row, q)| {
            let q = q.to_vec();
            for (tree, bucket) in forest.trees.iter().zip(buckets) {
                let members = bucket.bucket_of(tree, &q);
                let w = 1.0 / members.len() as f64;
                for &j in members {
                    row[j] += w;
                }
            }
            row.mapv_inplace(|v| v / b_count);
        });
    out
}

/// `K_ij = (1/B) sum_b 1{i, j share a leaf in tree b} / (training rows in that leaf)`.
///
/// Leaf populations are counted over the rows of `x_train` (over each tree's
/// label fold for honest forests), each row once.
pub fn rf_kernel_matrix(forest: &Forest, x_train: &Array2<f64>) -> Result<KernelMatrix> {
    let buckets = forest_buckets(forest, x_train)?;
    let values = kernel_rows(forest, &buckets, x_train, x_train.nrows());
    Ok(KernelMatrix {
        n: x_train.nrows(),
        values,
        forest_ref: format!("rf(trees={}, seed={})", forest.trees.len(), forest.params.seed),
    })
}

/// Kernel weights of query points against the training rows; shape `(Q, N)`.
/// A query landing in a leaf no training row reaches borrows the weights of
/// the nearest ancestor that has training rows.
pub fn rf_kernel_cross(forest: &Forest, x_train: &Array2<f64>, x_query: &Array2<f64>) -> Result<Array2<f64>> {
    check_dim(forest.n_features(), x_query.ncols())?;
    let buckets = forest_buckets(forest, x_train)?;
    Ok(kernel_rows(forest, &buckets, x_query, x_train.nrows()))
}

/// How leaves without training rows are treated when building a smoother.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafPolicy {
    /// Every leaf population must match the tree's own fitted sample counts.
    Strict,
    /// Empty leaves borrow the rows of their nearest populated ancestor.
    AncestorFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    /// Node index -> row of `correction`, or `usize::MAX` for internal nodes.
    pub leaf_slot: Vec<usize>,
    /// Training rows backing each leaf slot.
    pub members: Vec<Vec<usize>>,
    /// `R_b`: one row per leaf slot, length N.
    pub correction: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    /// Stacked smoothing rows of the training points.
    pub matrix: Array2<f64>,
    pub per_round: Vec<RoundState>,
    pub eta: f64,
    pub n: usize,
}

/// Builds the GBM smoother matrix on `x_train` and keeps every round's
/// correction matrix for out-of-sample rows.
pub fn gbm_smoother_matrix(model: &GbmModel, x_train: &Array2<f64>) -> Result<SmootherState> {
    gbm_smoother_matrix_with(model, x_train, LeafPolicy::Strict)
}

pub fn gbm_smoother_matrix_with(
    model: &GbmModel,
    x_train: &Array2<f64>,
    policy: LeafPolicy,
) -> Result<SmootherState> {
    check_dim(model.n_features, x_train.ncols())?;
    let n = x_train.nrows();
    let eta = model.learning_rate;
    let mut s = Array2::<f64>::zeros((n, n));
    let mut per_round = Vec::with_capacity(model.trees.len());
    for (b, tree) in model.trees.iter().enumerate() {
        let zeros = vec![0.0; n];
        let (count, _) = cart::node_label_totals(tree, x_train, &zeros);
        if policy == LeafPolicy::Strict {
            for node in 0..tree.n_nodes() {
                if tree.is_leaf(node) && count[node] != tree.n_node_samples[node] {
                    return Err(ScateError::ModelDataMismatch(format!(
                        "round {b}: leaf {node} holds {} rows, tree was fit on {}",
                        count[node], tree.n_node_samples[node]
                    )));
                }
            }
        }
        if count[0] == 0 {
            return Err(ScateError::ModelDataMismatch("no training rows".into()));
        }
        let buckets = TreeBuckets::new(tree, x_train, None);
        let mut leaf_slot = vec![usize::MAX; tree.n_nodes()];
        let mut members = Vec::new();
        for node in 0..tree.n_nodes() {
            if tree.is_leaf(node) {
                leaf_slot[node] = members.len();
                members.push(buckets.members[buckets.support[node]].clone());
            }
        }
        let row_slot: Vec<usize> = x_train
            .rows()
            .into_iter()
            .map(|r| leaf_slot[tree.leaf_of(&r.to_vec())])
            .collect();

        // R_b: leaf-wise means of the previous round's smoothing rows.
        let mut correction = Array2::<f64>::zeros((members.len(), n));
        correction
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(members.par_iter())
            .for_each(|(mut r, rows)| {
                for &i in rows {
                    r += &s.row(i);
                }
                let c = rows.len() as f64;
                r.mapv_inplace(|v| v / c);
            });

        s.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
            let slot = row_slot[i];
            let corr = correction.row(slot);
            let rows = &members[slot];
            let w = 1.0 / rows.len() as f64;
            let mut tree_w = vec![0.0; n];
            for &j in rows {
                tree_w[j] = w;
            }
            for j in 0..n {
                row[j] += eta * (tree_w[j] - corr[j]);
            }
        });
        per_round.push(RoundState { leaf_slot, members, correction });
    }
    Ok(SmootherState { matrix: s, per_round, eta, n })
}

/// Smoothing weights of a single point, replaying the recursion with the
/// stored correction matrices.
pub fn gbm_smoother_row(state: &SmootherState, model: &GbmModel, x: &[f64]) -> Result<Array1<f64>> {
    check_dim(model.n_features, x.len())?;
    if state.per_round.len() != model.trees.len() {
        return Err(ScateError::ModelDataMismatch(format!(
            "smoother holds {} rounds, model has {} trees",
            state.per_round.len(),
            model.trees.len()
        )));
    }
    let n = state.n;
    let eta = state.eta;
    let mut row = Array1::<f64>::zeros(n);
    let mut tree_w = vec![0.0; n];
    for (tree, round) in model.trees.iter().zip(&state.per_round) {
        let slot = round.leaf_slot[tree.leaf_of(x)];
        let rows = &round.members[slot];
        let w = 1.0 / rows.len() as f64;
        for &j in rows {
            tree_w[j] = w;
        }
        let corr = round.correction.row(slot);
        for j in 0..n {
            row[j] += eta * (tree_w[j] - corr[j]);
        }
        for &j in rows {
            tree_w[j] = 0.0;
        }
    }
    Ok(row)
}

/// Smoothing rows for a batch of query points, shape `(Q, N)`.
pub fn gbm_smoother_cross(state: &SmootherState, model: &GbmModel, x_query: &Array2<f64>) -> Result<Array2<f64>> {
    check_dim(model.n_features, x_query.ncols())?;
    let rows: Vec<Array1<f64>> = x_query
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|q| gbm_smoother_row(state, model, &q.to_vec()))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((x_query.nrows(), state.n));
    for (mut o, r) in out.rows_mut().into_iter().zip(rows) {
        o.assign(&r);
    }
    Ok(out)
}

/// Caps the rows used to build operators. Returns `rows` unchanged when it
/// fits, otherwise `cap` of them drawn uniformly without replacement (sorted).
pub fn subsample_operator(rows: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    if rows.len() <= cap {
        return rows.to_vec();
    }
    let mut rng = rng_from_seed(seed);
    let mut picked: Vec<usize> = rng::sample_without_replacement(&mut rng, rows.len(), cap)
        .into_iter()
        .map(|p| rows[p])
        .collect();
    picked.sort_unstable();
    picked
}

pub const MATRIX_MAGIC: &[u8; 8] = b"SCTEMAT0";

/// Raw matrix dump: magic, u64 rows, u64 cols, then little-endian f64 row-major.
pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| ScateError::Truncated)?;
    if &magic != MATRIX_MAGIC {
        return Err(ScateError::BadMagic);
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(|_| ScateError::Truncated)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|_| ScateError::Truncated)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut word).map_err(|_| ScateError::Truncated)?;
        data.push(f64::from_le_bytes(word));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| ScateError::ShapeMismatch(e.to_string()))
}
