//! Spectra of ensemble operators: symmetric eigendecomposition of the RF
//! kernel, randomized truncated SVD of the GBM smoother, the log-log
//! eigendecay fit, and the Eckart–Young truncation error.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScateError};
use crate::linalg;
use crate::rng::{rng_from_seed, standard_normal};

/// Top eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    /// `N x P`, orthonormal columns.
    pub eigenvectors: Array2<f64>,
    pub rank_full: usize,
}

/// Truncated SVD `S ~ U diag(sigma) V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriplet {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
    /// `min(rows, cols)` of the decomposed matrix.
    pub rank_full: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub beta: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Either kind of decomposition; the distillation code is written against this.
#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    Eigen(EigenDecomposition),
    Svd(SvdTriplet),
}

impl Decomposition {
    /// Spectral values (eigenvalues or singular values), descending.
    pub fn values(&self) -> &Array1<f64> {
        match self {
            Decomposition::Eigen(e) => &e.eigenvalues,
            Decomposition::Svd(s) => &s.sigma,
        }
    }

    /// Vectors evaluated on the training rows: eigenvectors, or left singular vectors.
    pub fn left(&self) -> &Array2<f64> {
        match self {
            Decomposition::Eigen(e) => &e.eigenvectors,
            Decomposition::Svd(s) => &s.u,
        }
    }

    /// Vectors contracted with the labels: eigenvectors, or right singular vectors.
    pub fn right(&self) -> &Array2<f64> {
        match self {
            Decomposition::Eigen(e) => &e.eigenvectors,
            Decomposition::Svd(s) => &s.v,
        }
    }

    pub fn rank(&self) -> usize {
        self.values().len()
    }

    pub fn rank_full(&self) -> usize {
        match self {
            Decomposition::Eigen(e) => e.rank_full,
            Decomposition::Svd(s) => s.rank_full,
        }
    }

    /// The leading `p` components (all of them when `p` exceeds the rank).
    pub fn truncated(&self, p: usize) -> Decomposition {
        let p = p.min(self.rank());
        match self {
            Decomposition::Eigen(e) => Decomposition::Eigen(EigenDecomposition {
                eigenvalues: e.eigenvalues.slice(s![..p]).to_owned(),
                eigenvectors: e.eigenvectors.slice(s![.., ..p]).to_owned(),
                rank_full: e.rank_full,
            }),
            Decomposition::Svd(t) => Decomposition::Svd(SvdTriplet {
                u: t.u.slice(s![.., ..p]).to_owned(),
                sigma: t.sigma.slice(s![..p]).to_owned(),
                v: t.v.slice(s![.., ..p]).to_owned(),
                rank_full: t.rank_full,
            }),
        }
    }
}

/// Knobs for [`eig_sym_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigOptions {
    /// Largest N solved with the dense Householder + QL path.
    pub dense_max_n: usize,
    pub oversample: usize,
    pub power_iters: usize,
    /// After the power iterations, Krylov blocks are added, up to
    /// `max_power_iters` blocks, while the largest Rayleigh residual exceeds
    /// `residual_tol * lambda_1`.
    pub max_power_iters: usize,
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            dense_max_n: 2000,
            oversample: 10,
            power_iters: 4,
            max_power_iters: 200,
            residual_tol: RANDOMIZED_RESIDUAL_TOL,
            seed: 0,
        }
    }
}

fn max_asymmetry(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((k[[i, j]] - k[[j, i]]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix truncated to `rank` (all when `None`).
pub fn eig_sym(k: &Array2<f64>, rank: Option<usize>) -> Result<EigenDecomposition> {
    eig_sym_with(k, rank, &EigOptions::default())
}

pub fn eig_sym_with(k: &Array2<f64>, rank: Option<usize>, opts: &EigOptions) -> Result<EigenDecomposition> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(ScateError::ShapeMismatch(format!("expected a square matrix, got {:?}", k.dim())));
    }
    let asym = max_asymmetry(k);
    if asym > 1e-10 {
        return Err(ScateError::NotSymmetric(asym));
    }
    let p = rank.unwrap_or(n);
    if p > n {
        return Err(ScateError::RankTooLarge { requested: p, available: n });
    }
    let (mut values, mut vectors) = if n <= opts.dense_max_n || p + opts.oversample >= n {
        let (vals, vecs) = linalg::symmetric_eigen(k)?;
        // ascending -> descending, keep the top p
        let values: Array1<f64> = vals.iter().rev().take(p).copied().collect();
        let vectors = vecs.slice(s![.., ..;-1]).slice(s![.., ..p]).to_owned();
        (values, vectors)
    } else {
        randomized_sym(k, p, opts)?
    };
    let _ = linalg::canonicalize_signs(&mut vectors);
    // exact zeros may come out as -0.0
    values.mapv_inplace(|v| if v == 0.0 { 0.0 } else { v });
    Ok(EigenDecomposition { eigenvalues: values, eigenvectors: vectors, rank_full: n })
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| standard_normal(&mut rng))
}

/// Relative residual at which the randomized solvers stop expanding their subspace.
pub const RANDOMIZED_RESIDUAL_TOL: f64 = 1e-8;

fn hcat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

// Subspace iteration warm start, then block-Krylov expansion with a
// Rayleigh–Ritz step after every block until the top `p` residuals fall
// below `residual_tol * lambda_1`. Stops after `max_power_iters` blocks or
// once the basis spans the whole space.
fn randomized_sym(k: &Array2<f64>, p: usize, opts: &EigOptions) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = k.nrows();
    let width = (p + opts.oversample).min(n);
    let mut q = k.dot(&gaussian(n, width, opts.seed));
    linalg::orthonormalize_columns(&mut q);
    for _ in 0..opts.power_iters {
        q = k.dot(&q);
        linalg::orthonormalize_columns(&mut q);
    }
    let mut basis = q;
    let mut k_basis = k.dot(&basis);
    let mut blocks = 1;
    loop {
        let mut small = basis.t().dot(&k_basis);
        let t = small.t().to_owned();
        small = (&small + &t) * 0.5;
        let (vals, vecs) = linalg::symmetric_eigen(&small)?;
        let values: Array1<f64> = vals.iter().rev().take(p).copied().collect();
        let top = vecs.slice(s![.., ..;-1]).slice(s![.., ..p]).to_owned();
        let ritz = basis.dot(&top);
        let k_ritz = k_basis.dot(&top);
        let lead = values.first().map(|v| v.abs()).unwrap_or(0.0);
        let resid = (0..p)
            .map(|j| {
                let d = &k_ritz.column(j) - &(&ritz.column(j) * values[j]);
                d.dot(&d).sqrt()
            })
            .fold(0.0, f64::max);
        let cols = basis.ncols();
        if resid <= opts.residual_tol * lead || cols >= n || blocks >= opts.max_power_iters {
            return Ok((values, ritz));
        }
        let grow = width.min(n - cols);
        let mut next = k_basis.slice(s![.., cols - width.min(cols)..]).slice(s![.., ..grow]).to_owned();
        linalg::orthonormalize_against(&basis, &mut next);
        let k_next = k.dot(&next);
        basis = hcat(&basis, &next);
        k_basis = hcat(&k_basis, &k_next);
        blocks += 1;
    }
}

/// Randomized truncated SVD: Gaussian range finder with `power_iters` rounds
/// of re-orthonormalized subspace iteration, then block-Krylov expansion
/// (one `A A^T` block at a time) until every kept triplet satisfies
/// `|A v - sigma u| <= RANDOMIZED_RESIDUAL_TOL * sigma_1`. The sketch width
/// `rank + oversample` is capped at `min(rows, cols)`.
pub fn svd_trunc(
    a: &Array2<f64>,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdTriplet> {
    let (m, n) = a.dim();
    let full = m.min(n);
    if rank > full {
        return Err(ScateError::RankTooLarge { requested: rank, available: full });
    }
    let width = (rank + oversample).min(full);
    let mut q = a.dot(&gaussian(n, width, seed));
    linalg::orthonormalize_columns(&mut q);
    for _ in 0..power_iters {
        let mut z = a.t().dot(&q);
        linalg::orthonormalize_columns(&mut z);
        q = a.dot(&z);
        linalg::orthonormalize_columns(&mut q);
    }
    let mut basis = q;
    // B = Q^T A is cols x n; take the SVD of B^T = W diag(s) X^T so that
    // A ~ (Q X) diag(s) W^T.
    let mut bt = a.t().dot(&basis);
    let (mut u, sigma, mut v) = loop {
        let (w, sigma, x) = linalg::jacobi_svd(&bt)?;
        let u = basis.dot(&x.slice(s![.., ..rank]));
        let v = w.slice(s![.., ..rank]).to_owned();
        let av = a.dot(&v);
        let lead = sigma.first().copied().unwrap_or(0.0);
        let resid = (0..rank)
            .map(|j| {
                let d = &av.column(j) - &(&u.column(j) * sigma[j]);
                d.dot(&d).sqrt()
            })
            .fold(0.0, f64::max);
        let cols = basis.ncols();
        if resid <= RANDOMIZED_RESIDUAL_TOL * lead || cols >= full {
            break (u, sigma, v);
        }
        let grow = width.min(full - cols);
        let mut next = a.dot(&bt.slice(s![.., cols - width.min(cols)..]).slice(s![.., ..grow]));
        linalg::orthonormalize_against(&basis, &mut next);
        let bt_next = a.t().dot(&next);
        basis = hcat(&basis, &next);
        bt = hcat(&bt, &bt_next);
    };
    // right vectors of zero singular values come back empty
    if sigma.iter().take(rank).any(|&s| s == 0.0) {
        linalg::orthonormalize_columns(&mut v);
    }
    let signs = linalg::canonicalize_signs(&mut u);
    for (mut col, sgn) in v.columns_mut().into_iter().zip(signs) {
        if sgn < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    Ok(SvdTriplet { u, sigma: sigma.slice(s![..rank]).to_owned(), v, rank_full: full })
}

/// Least-squares fit of `log(lambda_i)` on `log(i)` over the top `top_m`
/// values; `beta` is the negated slope. Values at or below `1e-14 * lambda_1`
/// are skipped.
pub fn decay_fit(eigenvalues: &[f64], top_m: usize) -> Result<DecayFit> {
    if top_m > eigenvalues.len() {
        return Err(ScateError::RankTooLarge { requested: top_m, available: eigenvalues.len() });
    }
    let lead = eigenvalues.first().copied().unwrap_or(0.0);
    let floor = 1e-14 * lead.max(0.0);
    let points: Vec<(f64, f64)> = eigenvalues[..top_m]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v > floor)
        .map(|(i, &v)| (((i + 1) as f64).ln(), v.ln()))
        .collect();
    if points.len() < 3 {
        return Err(ScateError::TooFewPositive(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit { beta: -slope, intercept, r2, n_points: points.len() })
}

/// Frobenius error of the best rank-`p` approximation, from the discarded
/// spectrum. Needs the full spectrum.
pub fn eckart_young_error(decomp: &Decomposition, p: usize) -> Result<f64> {
    let values = decomp.values();
    if values.len() < decomp.rank_full() {
        return Err(ScateError::RequiresFullSpectrum { held: values.len(), full: decomp.rank_full() });
    }
    Ok(values.iter().skip(p).map(|v| v * v).sum::<f64>().sqrt())
}

/// Rank-`p` truncation error from the Frobenius norm of the decomposed
/// matrix and its leading spectral values; works with a partial spectrum.
pub fn eckart_young_from_norm(frobenius_norm: f64, values: &[f64], p: usize) -> f64 {
    let kept: f64 = values.iter().take(p).map(|v| v * v).sum();
    (frobenius_norm * frobenius_norm - kept).max(0.0).sqrt()
}

/// `max_j ||K psi_j - lambda_j psi_j||_2` over the kept eigenpairs.
pub fn max_rayleigh_residual(k: &Array2<f64>, decomp: &EigenDecomposition) -> f64 {
    let kv = k.dot(&decomp.eigenvectors);
    (0..decomp.eigenvalues.len())
        .map(|j| {
            let lam = decomp.eigenvalues[j];
            kv.column(j)
                .iter()
                .zip(decomp.eigenvectors.column(j))
                .map(|(a, b)| (a - lam * b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Spectrum report: `index,<label>` rows (1-based) followed by one JSON line
/// holding the decay fit, when present.
pub fn write_spectrum_csv<W: Write>(mut w: W, label: &str, values: &[f64], fit: Option<&DecayFit>) -> Result<()> {
    writeln!(w, "index,{label}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{},{v:e}", i + 1)?;
    }
    if let Some(f) = fit {
        let footer = serde_json::json!({ "beta": f.beta, "intercept": f.intercept, "r2": f.r2 });
        writeln!(w, "{footer}")?;
    }
    Ok(())
}

/// Parses [`write_spectrum_csv`] output back into values and the optional fit
/// (`n_points` is not stored and comes back as 0).
pub fn read_spectrum_csv<R: BufRead>(r: R) -> Result<(Vec<f64>, Option<DecayFit>)> {
    let mut values = Vec::new();
    let mut fit = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(&line)?;
            let get = |k: &str| v.get(k).and_then(|x| x.as_f64()).unwrap_or(f64::NAN);
            fit = Some(DecayFit { beta: get("beta"), intercept: get("intercept"), r2: get("r2"), n_points: 0 });
            continue;
        }
        let (_, val) = line.split_once(',').ok_or_else(|| ScateError::ParseError {
            row: lineno,
            col: 0,
            msg: "expected `index,value`".into(),
        })?;
        values.push(val.trim().parse().map_err(|e: std::num::ParseFloatError| ScateError::ParseError {
            row: lineno,
            col: 1,
            msg: e.to_string(),
        })?);
    }
    Ok((values, fit))
}
