//! Greedy axis-aligned regression trees (CART with squared error).
//!
//! Trees are stored as parallel node arrays. Node 0 is the root, `feature[i] == -1`
//! marks a leaf, and a point goes left iff `x[feature] <= threshold`.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScateError};
use crate::rng;

pub const LEAF: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    /// Leaf prediction; NaN at internal nodes.
    pub value: Vec<f64>,
    pub n_node_samples: Vec<usize>,
    pub leaf_count: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features sampled per split; `None` means all of them.
    pub mtry: Option<usize>,
    /// Minimum fraction of a node's samples each child must receive.
    pub balance_gamma: f64,
    /// Learn structure and leaf labels on disjoint halves of the tree sample.
    pub honest: bool,
    pub subsample_fraction: f64,
    pub bootstrap: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            mtry: None,
            balance_gamma: 0.0,
            honest: false,
            subsample_fraction: 1.0,
            bootstrap: true,
        }
    }
}

impl TreeParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(ScateError::InvalidParameter("min_samples_leaf must be >= 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(ScateError::InvalidParameter(format!("mtry must be in 1..={d}, got {m}")));
            }
        }
        if !(0.0..=0.5).contains(&self.balance_gamma) {
            return Err(ScateError::InvalidParameter(format!(
                "balance_gamma must be in [0, 0.5], got {}",
                self.balance_gamma
            )));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ScateError::InvalidParameter(format!(
                "subsample_fraction must be in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        Ok(())
    }
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    /// Parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.n_nodes()];
        for i in 0..self.n_nodes() {
            if !self.is_leaf(i) {
                parent[self.left[i] as usize] = Some(i);
                parent[self.right[i] as usize] = Some(i);
            }
        }
        parent
    }

    /// Depth of every node (root at 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.n_nodes()];
        // children always carry larger indices than their parent
        for i in 0..self.n_nodes() {
            if !self.is_leaf(i) {
                depth[self.left[i] as usize] = depth[i] + 1;
                depth[self.right[i] as usize] = depth[i] + 1;
            }
        }
        depth
    }

    pub fn max_depth(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    /// Leaf reached by `x`, without a dimension check.
    #[inline]
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut node = 0usize;
        while self.feature[node] != LEAF {
            let f = self.feature[node] as usize;
            node = if x[f] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    /// Leaf reached by every row of `x`.
    pub fn leaves_of(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        check_dim(self.n_features, x.ncols())?;
        Ok(x.rows().into_iter().map(|r| self.leaf_of_view(r)).collect())
    }

    fn leaf_of_view(&self, x: ArrayView1<f64>) -> usize {
        match x.as_slice() {
            Some(s) => self.leaf_of(s),
            None => self.leaf_of(&x.to_vec()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tree serializes")
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ScateError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Node index of the leaf `x` falls into.
pub fn leaf_id(tree: &Tree, x: &[f64]) -> Result<usize> {
    check_dim(tree.n_features, x.len())?;
    Ok(tree.leaf_of(x))
}

pub fn predict_tree(tree: &Tree, x: &[f64]) -> Result<f64> {
    Ok(tree.value[leaf_id(tree, x)?])
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    params: &'a TreeParams,
    mtry: usize,
    tree: Tree,
}

impl<'a> Builder<'a> {
    fn push_node(&mut self, n: usize) -> usize {
        let t = &mut self.tree;
        t.feature.push(LEAF);
        t.threshold.push(f64::NAN);
        t.left.push(LEAF);
        t.right.push(LEAF);
        t.value.push(f64::NAN);
        t.n_node_samples.push(n);
        t.feature.len() - 1
    }

    /// Best split of `rows`, maximizing `S_l^2/n_l + S_r^2/n_r` (equivalently
    /// minimizing the summed child squared error). Candidate features are
    /// scanned in ascending index order and only strict improvements replace
    /// the incumbent, so ties go to the lowest feature, then lowest threshold.
    fn best_split<R: Rng + ?Sized>(&self, rows: &[usize], rng: &mut R) -> Option<Split> {
        let n = rows.len();
        let d = self.x.ncols();
        let mut features = if self.mtry == d {
            (0..d).collect::<Vec<_>>()
        } else {
            rng::sample_without_replacement(rng, d, self.mtry)
        };
        features.sort_unstable();

        let min_leaf = self.params.min_samples_leaf;
        let min_balance = self.params.balance_gamma * n as f64 - 1e-9;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();

        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, f]], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += pairs[k].1;
                let (v, next) = (pairs[k].0, pairs[k + 1].0);
                if v == next {
                    continue;
                }
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                if (n_left.min(n_right) as f64) < min_balance {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(Split { feature: f, threshold, score });
                }
            }
        }
        best
    }

    fn grow<R: Rng + ?Sized>(&mut self, rows: Vec<usize>, rng: &mut R) {
        let root = self.push_node(rows.len());
        let mut stack = vec![(root, rows, 0usize)];
        while let Some((node, rows, depth)) = stack.pop() {
            let n = rows.len();
            let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
            let first = self.y[rows[0]];
            let pure = rows.iter().all(|&r| self.y[r] == first);
            let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
            let split = if pure || depth_capped || n < 2 * self.params.min_samples_leaf {
                None
            } else {
                self.best_split(&rows, rng)
            };
            match split {
                None => {
                    self.tree.value[node] = mean;
                    self.tree.leaf_count += 1;
                }
                Some(s) => {
                    let (lrows, rrows): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&r| self.x[[r, s.feature]] <= s.threshold);
                    let l = self.push_node(lrows.len());
                    let r = self.push_node(rrows.len());
                    let t = &mut self.tree;
                    t.feature[node] = s.feature as i32;
                    t.threshold[node] = s.threshold;
                    t.left[node] = l as i32;
                    t.right[node] = r as i32;
                    stack.push((r, rrows, depth + 1));
                    stack.push((l, lrows, depth + 1));
                }
            }
        }
    }
}

/// Fits a tree on all rows of `x`.
pub fn fit_tree<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &[f64],
    params: &TreeParams,
    rng: &mut R,
) -> Result<Tree> {
    fit_tree_on_rows(x, y, (0..x.nrows()).collect(), params, rng)
}

/// Fits a tree on the given rows of `x` (duplicates allowed, as in bootstrap samples).
pub fn fit_tree_on_rows<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
) -> Result<Tree> {
    check_dim(x.nrows(), y.len())?;
    let d = x.ncols();
    params.validate(d)?;
    let needed = 2 * params.min_samples_leaf;
    if rows.len() < needed.max(1) {
        return Err(ScateError::TooFewSamples { needed, got: rows.len() });
    }
    let mut builder = Builder {
        x,
        y,
        params,
        mtry: params.mtry.unwrap_or(d),
        tree: Tree {
            feature: vec![],
            threshold: vec![],
            left: vec![],
            right: vec![],
            value: vec![],
            n_node_samples: vec![],
            leaf_count: 0,
            n_features: d,
        },
    };
    builder.grow(rows, rng);
    Ok(builder.tree)
}

/// For each node, the number and label sum of the given rows passing through it.
pub(crate) fn node_label_totals(tree: &Tree, x: &Array2<f64>, y: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut count = vec![0usize; tree.n_nodes()];
    let mut sum = vec![0.0; tree.n_nodes()];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let xs = row.to_vec();
        let mut node = 0usize;
        loop {
            count[node] += 1;
            sum[node] += yi;
            if tree.is_leaf(node) {
                break;
            }
            let f = tree.feature[node] as usize;
            node = if xs[f] <= tree.threshold[node] {
                tree.left[node] as usize
            } else {
                tree.right[node] as usize
            };
        }
    }
    (count, sum)
}

/// For each leaf, the closest node on its root path (itself included) that
/// `count` marks as non-empty. Internal nodes map to themselves.
pub(crate) fn support_nodes(tree: &Tree, count: &[usize]) -> Vec<usize> {
    let parent = tree.parents();
    (0..tree.n_nodes())
        .map(|i| {
            if !tree.is_leaf(i) {
                return i;
            }
            let mut node = i;
            while count[node] == 0 {
                match parent[node] {
                    Some(p) => node = p,
                    None => break,
                }
            }
            node
        })
        .collect()
}

/// Replaces every leaf value with the mean label of the `x_label` rows routed to
/// it. A leaf that receives no rows takes the mean of its nearest non-empty
/// ancestor.
pub fn honest_relabel(tree: &Tree, x_label: &Array2<f64>, y_label: &[f64]) -> Result<Tree> {
    check_dim(tree.n_features, x_label.ncols())?;
    check_dim(x_label.nrows(), y_label.len())?;
    if y_label.is_empty() {
        return Err(ScateError::EmptyLabelFold);
    }
    let (count, sum) = node_label_totals(tree, x_label, y_label);
    let support = support_nodes(tree, &count);
    let mut out = tree.clone();
    for i in 0..tree.n_nodes() {
        if tree.is_leaf(i) {
            let s = support[i];
            out.value[i] = sum[s] / count[s] as f64;
        }
    }
    Ok(out)
}
