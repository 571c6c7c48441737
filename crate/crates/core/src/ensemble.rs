//! Random forests and L2 gradient boosting built from [`crate::cart`] trees.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{self, Tree, TreeParams};
use crate::data::Dataset;
use crate::error::{Result, ScateError};
use crate::rng::{self, derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 250,
            tree: TreeParams { max_depth: Some(15), ..TreeParams::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Training-row indices each tree's structure was grown on (with bootstrap duplicates).
    pub tree_row_sets: Vec<Vec<usize>>,
    /// Honest mode only: the disjoint rows that labelled each tree's leaves.
    pub label_row_sets: Option<Vec<Vec<usize>>>,
    pub params: ForestParams,
    /// Leaf values are means over the full training set.
    pub relabeled_on_full_train: bool,
    pub n_train: usize,
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ScateError::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    /// Rows whose labels define tree `b`'s leaf values (and normalize its kernel).
    pub fn normalization_rows(&self, b: usize) -> Option<&[usize]> {
        self.label_row_sets.as_ref().map(|sets| sets[b].as_slice())
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        check_dim(self.n_features(), x.ncols())?;
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let xs = r.to_vec();
                self.trees.iter().map(|t| t.value[t.leaf_of(&xs)]).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }

    /// Per-tree predictions, shape `(rows, n_trees)`.
    pub fn predict_per_tree(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim(self.n_features(), x.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.trees.len()));
        for (i, r) in x.rows().into_iter().enumerate() {
            let xs = r.to_vec();
            for (b, t) in self.trees.iter().enumerate() {
                out[[i, b]] = t.value[t.leaf_of(&xs)];
            }
        }
        Ok(out)
    }
}

/// Trains a random forest.
///
/// Each tree draws its own sample from the stream `(seed, tree index)`. In the
/// default mode the fitted leaves are then relabeled with full-training-set
/// means so that predictions on training rows equal `K y` exactly. In honest
/// mode the sample is halved: one half grows the structure, the other labels it.
pub fn fit_rf(train: &Dataset, params: &ForestParams) -> Result<Forest> {
    let n = train.n_rows();
    if n == 0 {
        return Err(ScateError::EmptyTraining);
    }
    if params.n_trees == 0 {
        return Err(ScateError::InvalidParameter("n_trees must be >= 1".into()));
    }
    let tp = &params.tree;
    tp.validate(train.n_features())?;
    let x = &train.features;
    let y = train.target.as_slice().expect("contiguous target");
    let sample_size = ((tp.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);

    let fitted: Vec<(Tree, Vec<usize>, Option<Vec<usize>>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(params.seed, &[b as u64]));
            let mut sample: Vec<usize> = if tp.bootstrap {
                (0..sample_size).map(|_| rng::uniform_index(&mut rng, n)).collect()
            } else {
                rng::sample_without_replacement(&mut rng, n, sample_size)
            };
            if tp.honest {
                sample.sort_unstable();
                sample.dedup();
                rng::shuffle(&mut rng, &mut sample);
                let half = sample.len().div_ceil(2);
                let label_rows = sample.split_off(half);
                if label_rows.is_empty() {
                    return Err(ScateError::EmptyLabelFold);
                }
                let tree = cart::fit_tree_on_rows(x, y, sample.clone(), tp, &mut rng)?;
                let xl = x.select(Axis(0), &label_rows);
                let yl: Vec<f64> = label_rows.iter().map(|&i| y[i]).collect();
                let tree = cart::honest_relabel(&tree, &xl, &yl)?;
                Ok((tree, sample, Some(label_rows)))
            } else {
                let tree = cart::fit_tree_on_rows(x, y, sample.clone(), tp, &mut rng)?;
                let tree = cart::honest_relabel(&tree, x, y)?;
                Ok((tree, sample, None))
            }
        })
        .collect::<Result<_>>()?;

    let mut trees = Vec::with_capacity(fitted.len());
    let mut rows = Vec::with_capacity(fitted.len());
    let mut labels = Vec::with_capacity(fitted.len());
    for (t, r, l) in fitted {
        trees.push(t);
        rows.push(r);
        labels.push(l);
    }
    let label_row_sets = if tp.honest {
        Some(labels.into_iter().map(|l| l.expect("honest label rows")).collect())
    } else {
        None
    };
    Ok(Forest {
        trees,
        tree_row_sets: rows,
        label_row_sets,
        params: params.clone(),
        relabeled_on_full_train: !tp.honest,
        n_train: n,
    })
}

/// Mean of the per-tree predictions.
pub fn predict_rf(forest: &Forest, x: &[f64]) -> Result<f64> {
    check_dim(forest.n_features(), x.len())?;
    Ok(forest.trees.iter().map(|t| t.value[t.leaf_of(x)]).sum::<f64>() / forest.trees.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    /// Sampling flags (`bootstrap`, `subsample_fraction`, `honest`) are ignored:
    /// every round fits on all rows.
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_trees: 100,
            learning_rate: 0.1,
            tree: TreeParams { max_depth: Some(6), bootstrap: false, ..TreeParams::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub params: GbmParams,
    pub n_features: usize,
}

impl GbmModel {
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        check_dim(self.n_features, x.ncols())?;
        Ok(x.rows().into_iter().map(|r| self.predict_unchecked(&r.to_vec())).collect())
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.value[t.leaf_of(x)]).sum::<f64>()
    }
}

/// L2 gradient boosting from `f_0 = 0`: each round fits a tree to the current
/// residuals and adds it with shrinkage `learning_rate`.
pub fn fit_gbm(train: &Dataset, params: &GbmParams) -> Result<GbmModel> {
    fit_gbm_traced(train, params).map(|(m, _)| m)
}

/// Like [`fit_gbm`], also returning the training MSE after each round.
pub fn fit_gbm_traced(train: &Dataset, params: &GbmParams) -> Result<(GbmModel, Vec<f64>)> {
    let n = train.n_rows();
    if n == 0 {
        return Err(ScateError::EmptyTraining);
    }
    let eta = params.learning_rate;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ScateError::BadLearningRate(eta));
    }
    let tp = TreeParams { bootstrap: false, subsample_fraction: 1.0, honest: false, ..params.tree.clone() };
    tp.validate(train.n_features())?;
    let x = &train.features;
    let y = train.target.as_slice().expect("contiguous target");
    let mut fitted = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut trace = Vec::with_capacity(params.n_trees);
    for b in 0..params.n_trees {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
        let mut rng = rng_from_seed(derive_seed(params.seed, &[b as u64]));
        let tree = cart::fit_tree(x, &residual, &tp, &mut rng)?;
        for (i, row) in x.rows().into_iter().enumerate() {
            fitted[i] += eta * tree.value[tree.leaf_of(&row.to_vec())];
        }
        trace.push(y.iter().zip(&fitted).map(|(a, f)| (a - f).powi(2)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok((
        GbmModel {
            trees,
            learning_rate: eta,
            base_score: 0.0,
            params: params.clone(),
            n_features: train.n_features(),
        },
        trace,
    ))
}

pub fn predict_gbm(model: &GbmModel, x: &[f64]) -> Result<f64> {
    check_dim(model.n_features, x.len())?;
    Ok(model.predict_unchecked(x))
}
