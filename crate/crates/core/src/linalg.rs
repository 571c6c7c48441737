//! Dense kernels behind the spectral module: Householder tridiagonalization
//! with implicit QL for symmetric matrices, one-sided Jacobi SVD for thin
//! matrices, and Gram–Schmidt orthonormalization.

use ndarray::{Array1, Array2};

use crate::error::{Result, ScateError};

/// Iteration budget per eigenvalue in the QL sweep.
const QL_MAX_ITER: usize = 64;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Full eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the returned matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let mut v: Vec<f64> = a.iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    // QL rotates columns of V; work on its transpose so columns are contiguous.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    tql2(n, &mut vt, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::zeros((n, n));
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, c]] = vt[src * n + r];
        }
    }
    Ok((values, vectors))
}

// Householder reduction to tridiagonal form (after the EISPACK tred2 routine).
// `v` is row-major n x n; on exit it holds the accumulated transformation.
fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    let vkj = v[idx(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal (d, e). `vt` holds eigenvector
// columns as rows.
fn tql2(n: usize, vt: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(ScateError::ConvergenceFailure(QL_MAX_ITER * n));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let col_i = &mut lo[i * n..];
                    let col_i1 = &mut hi[..n];
                    for k in 0..n {
                        let h = col_i1[k];
                        col_i1[k] = s * col_i[k] + c * h;
                        col_i[k] = c * col_i[k] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Thin SVD of an `m x n` matrix with `m >= n` by one-sided Jacobi rotations.
///
/// Returns `(U, sigma, V)` with `A = U diag(sigma) V^T`, sigma descending.
/// Columns of `U` belonging to zero singular values are zero.
pub fn jacobi_svd(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (m, n) = a.dim();
    if m < n {
        return Err(ScateError::ShapeMismatch(format!("jacobi_svd needs rows >= cols, got {m}x{n}")));
    }
    // columns stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            c
        })
        .collect();
    let tol = f64::EPSILON * (m as f64).sqrt();
    let scale: f64 = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max);
    let negligible = scale * f64::EPSILON * f64::EPSILON;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for k in 0..m {
                        al += wp[k] * wp[k];
                        be += wq[k] * wq[k];
                        ga += wp[k] * wq[k];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || alpha <= negligible || beta <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ScateError::ConvergenceFailure(JACOBI_MAX_SWEEPS));
    }
    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = Array2::zeros((m, n));
    let mut vm = Array2::zeros((n, n));
    let mut sigma = Array1::zeros(n);
    for (c, &src) in order.iter().enumerate() {
        sigma[c] = norms[src];
        if norms[src] > 0.0 {
            for r in 0..m {
                u[[r, c]] = w[src][r] / norms[src];
            }
        }
        for r in 0..n {
            vm[[r, c]] = v[src][r];
        }
    }
    Ok((u, sigma, vm))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Orthonormalizes the columns of `a` in place (classical Gram–Schmidt, two
/// passes). Columns that collapse numerically are replaced by unit vectors
/// orthogonal to the ones before them.
pub fn orthonormalize_columns(a: &mut Array2<f64>) {
    let (m, n) = a.dim();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    for j in 0..n {
        let original = norm(&cols[j]);
        for _ in 0..2 {
            project_out(&mut cols, j);
        }
        let mut nrm = norm(&cols[j]);
        if nrm <= 1e-12 * original.max(f64::MIN_POSITIVE) || nrm == 0.0 {
            // fill with the first standard basis vector that survives projection
            for basis in 0..m {
                let mut c = vec![0.0; m];
                c[(basis + j) % m] = 1.0;
                cols[j] = c;
                for _ in 0..2 {
                    project_out(&mut cols, j);
                }
                nrm = norm(&cols[j]);
                if nrm > 1e-8 {
                    break;
                }
            }
        }
        for x in cols[j].iter_mut() {
            *x /= nrm;
        }
    }
    for (j, c) in cols.iter().enumerate() {
        for (r, &x) in c.iter().enumerate() {
            a[[r, j]] = x;
        }
    }
}

/// Orthonormalizes `block` against the orthonormal columns of `basis` and
/// within itself.
pub fn orthonormalize_against(basis: &Array2<f64>, block: &mut Array2<f64>) {
    for _ in 0..2 {
        let coef = basis.t().dot(&*block);
        *block -= &basis.dot(&coef);
    }
    orthonormalize_columns(block);
    // replacement columns from the collapse path may still overlap the basis
    let coef = basis.t().dot(&*block);
    *block -= &basis.dot(&coef);
    orthonormalize_columns(block);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_out(cols: &mut [Vec<f64>], j: usize) {
    let (done, rest) = cols.split_at_mut(j);
    let target = &mut rest[0];
    for q in done.iter() {
        let dot: f64 = q.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
        for (t, qv) in target.iter_mut().zip(q) {
            *t -= dot * qv;
        }
    }
}

/// Flips column signs so each column's largest-magnitude entry is positive.
/// Returns the applied signs.
pub fn canonicalize_signs(a: &mut Array2<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(a.ncols());
    for mut col in a.columns_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = if x < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        signs.push(sign);
    }
    signs
}
