//! A small fully connected network: SiLU hidden layers, linear output,
//! hand-written backpropagation and Adam.
//!
//! All products are explicit loops with a fixed summation order, so a batch
//! forward pass and row-by-row passes agree bit for bit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScateError};
use crate::rng::{rng_from_seed, uniform01};

/// Rows handled per work item; gradients are reduced chunk by chunk in order.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` is `layer_dims[l + 1] x layer_dims[l]`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter-shaped buffer: gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

/// Number of weights and biases for the given layer sizes.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Layer sizes `[d_in, width x depth, p_out]`.
pub fn arch_dims(d_in: usize, width: usize, depth: usize, p_out: usize) -> Vec<usize> {
    let mut dims = vec![d_in];
    dims.extend(std::iter::repeat_n(width, depth));
    dims.push(p_out);
    dims
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(ScateError::BadDims(dims.to_vec()));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<Mlp> {
    check_dims(dims)?;
    let mut rng = rng_from_seed(seed);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| (2.0 * uniform01(&mut rng) - 1.0) * limit));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(Mlp { layer_dims: dims.to_vec(), weights, biases })
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Weights layer by layer (row-major), then biases, per layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    pub fn d_in(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn d_out(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layer_dims)
    }

    /// Same ordering as [`MlpGrads::flatten`].
    pub fn params_flat(&self) -> Vec<f64> {
        MlpGrads { weights: self.weights.clone(), biases: self.biases.clone() }.flatten()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(ScateError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(ScateError::DimensionMismatch { expected: self.d_in(), got: x.ncols() });
        }
        Ok(())
    }

    // Pre-activations of every layer for one input row.
    fn row_pre_activations(&self, x: ArrayView1<f64>) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                zs[l - 1].iter().map(|&z| silu(z)).collect()
            };
            let z: Vec<f64> = (0..w.nrows())
                .map(|o| {
                    let row = w.row(o);
                    let mut acc = b[o];
                    for (wi, ai) in row.iter().zip(&input) {
                        acc += wi * ai;
                    }
                    acc
                })
                .collect();
            zs.push(z);
        }
        zs
    }

    /// Output for a single row.
    pub fn forward_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(ScateError::DimensionMismatch { expected: self.d_in(), got: x.len() });
        }
        Ok(self.row_pre_activations(ArrayView1::from(x)).pop().unwrap())
    }
}

/// Batch forward pass; row `i` of the result is the network output for row `i` of `x`.
pub fn forward(mlp: &Mlp, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    mlp.check_input(x)?;
    let n = x.nrows();
    let p = mlp.d_out();
    let mut out = Array2::zeros((n, p));
    out.axis_chunks_iter_mut(Axis(0), CHUNK)
        .into_par_iter()
        .zip(x.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
        .for_each(|(mut o, xc)| {
            for (mut orow, xrow) in o.rows_mut().into_iter().zip(xc.rows()) {
                let z = mlp.row_pre_activations(xrow).pop().unwrap();
                for (dst, v) in orow.iter_mut().zip(z) {
                    *dst = v;
                }
            }
        });
    Ok(out)
}

/// Gradients of `sum_ij output_grad_ij * out_ij` with respect to all parameters.
pub fn backward(mlp: &Mlp, x: &ArrayView2<f64>, output_grad: &ArrayView2<f64>) -> Result<MlpGrads> {
    mlp.check_input(x)?;
    if output_grad.dim() != (x.nrows(), mlp.d_out()) {
        return Err(ScateError::DimensionMismatch { expected: mlp.d_out(), got: output_grad.ncols() });
    }
    let partials: Vec<MlpGrads> = x
        .axis_chunks_iter(Axis(0), CHUNK)
        .into_par_iter()
        .zip(output_grad.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
        .map(|(xc, gc)| {
            let mut g = MlpGrads::zeros_like(mlp);
            for (xrow, grow) in xc.rows().into_iter().zip(gc.rows()) {
                backward_row(mlp, xrow, grow, &mut g);
            }
            g
        })
        .collect();
    let mut total = MlpGrads::zeros_like(mlp);
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

fn backward_row(mlp: &Mlp, x: ArrayView1<f64>, out_grad: ArrayView1<f64>, g: &mut MlpGrads) {
    let zs = mlp.row_pre_activations(x);
    let n_layers = mlp.n_layers();
    let mut delta: Vec<f64> = out_grad.to_vec();
    for l in (0..n_layers).rev() {
        let input: Vec<f64> = if l == 0 { x.to_vec() } else { zs[l - 1].iter().map(|&z| silu(z)).collect() };
        let gw = &mut g.weights[l];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.biases[l][o] += d;
            for (gwi, ai) in gw.row_mut(o).iter_mut().zip(&input) {
                *gwi += d * ai;
            }
        }
        if l > 0 {
            let w = &mlp.weights[l];
            let mut prev = vec![0.0; w.ncols()];
            for (o, &d) in delta.iter().enumerate() {
                for (pi, wi) in prev.iter_mut().zip(w.row(o)) {
                    *pi += d * wi;
                }
            }
            for (pi, &z) in prev.iter_mut().zip(&zs[l - 1]) {
                *pi *= silu_grad(z);
            }
            delta = prev;
        }
    }
}

impl AdamState {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        AdamState {
            m: MlpGrads::zeros_like(mlp),
            v: MlpGrads::zeros_like(mlp),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(mlp: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    let shapes_ok = mlp.weights.len() == grads.weights.len()
        && mlp.weights.len() == state.m.weights.len()
        && mlp.weights.iter().zip(&grads.weights).all(|(a, b)| a.dim() == b.dim())
        && mlp.biases.iter().zip(&grads.biases).all(|(a, b)| a.dim() == b.dim())
        && mlp.weights.iter().zip(&state.m.weights).all(|(a, b)| a.dim() == b.dim());
    if !shapes_ok {
        return Err(ScateError::ShapeMismatch("gradient or optimizer state does not match the network".into()));
    }
    state.t += 1;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    };
    for l in 0..mlp.n_layers() {
        for (((p, g), m), v) in mlp.weights[l]
            .iter_mut()
            .zip(grads.weights[l].iter())
            .zip(state.m.weights[l].iter_mut())
            .zip(state.v.weights[l].iter_mut())
        {
            update(p, *g, m, v);
        }
        for (((p, g), m), v) in mlp.biases[l]
            .iter_mut()
            .zip(grads.biases[l].iter())
            .zip(state.m.biases[l].iter_mut())
            .zip(state.v.biases[l].iter_mut())
        {
            update(p, *g, m, v);
        }
    }
    Ok(())
}

/// Largest relative error between backprop and five-point central
/// differences (step `eps`) of `0.5 * ||forward(x) - t||^2`, using
/// `|a - b| / max(|a|, |b|, floor)`.
///
/// Each perturbed loss is recomputed from the perturbed layer onward, so the
/// cost per parameter is that of the layers downstream of it.
pub fn gradient_check(mlp: &Mlp, x: &ArrayView2<f64>, t: &ArrayView2<f64>, eps: f64, floor: f64) -> Result<f64> {
    mlp.check_input(x)?;
    if t.dim() != (x.nrows(), mlp.d_out()) {
        return Err(ScateError::ShapeMismatch(format!("targets {:?}, outputs {:?}", t.dim(), (x.nrows(), mlp.d_out()))));
    }
    let out = forward(mlp, x)?;
    let resid = &out - t;
    let analytic = backward(mlp, x, &resid.view())?.flatten();

    let n = x.nrows();
    let nl = mlp.n_layers();
    // inputs[l] feeds layer l; pre[l] is its pre-activation
    let mut inputs = vec![x.to_owned()];
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(nl);
    for l in 0..nl {
        let z = inputs[l].dot(&mlp.weights[l].t()) + &mlp.biases[l];
        if l + 1 < nl {
            inputs.push(z.mapv(silu));
        }
        pre.push(z);
    }
    let half_sq = |z: &Array2<f64>| 0.5 * (z - t).iter().map(|v| v * v).sum::<f64>();
    // loss after shifting column `r` of layer `l`'s pre-activation by `dz`
    let shifted_loss = |l: usize, r: usize, dz: &[f64]| -> f64 {
        if l + 1 == nl {
            let mut z = pre[l].clone();
            for (i, d) in dz.iter().enumerate() {
                z[[i, r]] += d;
            }
            return half_sq(&z);
        }
        let w_next = &mlp.weights[l + 1];
        let mut z = pre[l + 1].clone();
        for i in 0..n {
            let da = silu(pre[l][[i, r]] + dz[i]) - inputs[l + 1][[i, r]];
            for o in 0..w_next.nrows() {
                z[[i, o]] += w_next[[o, r]] * da;
            }
        }
        for m in (l + 2)..nl {
            z = z.mapv(silu).dot(&mlp.weights[m].t()) + &mlp.biases[m];
        }
        half_sq(&z)
    };
    let five_point = |f: &dyn Fn(f64) -> f64| (-f(2.0 * eps) + 8.0 * f(eps) - 8.0 * f(-eps) + f(-2.0 * eps)) / (12.0 * eps);

    let mut worst: f64 = 0.0;
    let mut k = 0;
    let mut compare = |numeric: f64| {
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        k += 1;
    };
    for l in 0..nl {
        let (rows, cols) = mlp.weights[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                let col = inputs[l].column(c);
                compare(five_point(&|h: f64| {
                    let dz: Vec<f64> = col.iter().map(|a| h * a).collect();
                    shifted_loss(l, r, &dz)
                }));
            }
        }
        for r in 0..rows {
            compare(five_point(&|h: f64| shifted_loss(l, r, &vec![h; n])));
        }
    }
    Ok(worst)
}
