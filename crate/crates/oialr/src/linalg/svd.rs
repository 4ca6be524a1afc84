//! Compact singular value decomposition via one-sided Jacobi rotations.
//!
//! `compact_svd` returns `A = U diag(s) V^T` with `U` of shape m x r,
//! `V` of shape n x r and r = min(m, n). Factors are deterministic: the
//! sweep order is fixed, ties in the descending sort keep their original
//! order, and each column of `U` is sign-normalized so its
//! largest-magnitude entry is positive (ties broken by lowest row index).

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Hard cap on Jacobi sweeps before reporting non-convergence.
const MAX_SWEEPS: usize = 60;
/// Relative off-diagonal threshold: a column pair (p, q) is rotated while
/// |a_p . a_q| > tol * ||a_p|| * ||a_q||.
const JACOBI_TOL: f64 = 1e-12;
/// Singular values below this fraction of the largest are clamped to 0.
const SV_CLAMP_REL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left factor, m x r, orthonormal columns.
    pub u: Matrix,
    /// Singular values, length r, sorted descending, non-negative.
    pub s: Vec<f64>,
    /// Right factor, n x r, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    /// Reconstructs `u * diag(s) * v^T`.
    pub fn reconstruct(&self) -> Matrix {
        let r = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            let row = us.row_mut(i);
            for j in 0..r {
                row[j] *= self.s[j];
            }
        }
        us.matmul_nt(&self.v).expect("svd factor shapes")
    }
}

pub fn compact_svd(a: &Matrix) -> Result<SvdFactors> {
    if !a.all_finite() {
        return Err(Error::NonFiniteInput { op: "compact_svd" });
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Internal("compact_svd on empty matrix".into()));
    }
    let (mut u, s, mut v) = if a.rows() >= a.cols() {
        jacobi_tall(a)?
    } else {
        // Work on the transpose and swap the roles of the factors.
        let (ut, s, vt) = jacobi_tall(&a.transpose())?;
        (vt, s, ut)
    };
    sign_normalize(&mut u, &mut v);
    Ok(SvdFactors { u, s, v })
}

/// Polar-decomposition orthogonal factor `U V^T`, the semi-orthogonal
/// component of a weight matrix.
pub fn orthogonal_component(a: &Matrix) -> Result<Matrix> {
    let f = compact_svd(a)?;
    f.u.matmul_nt(&f.v)
}

/// One-sided Jacobi on a tall (m >= n) matrix. Returns (u m x n, s, v n x n).
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);

    // Column-major working copies: rotations touch two contiguous vectors.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut v_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    if n > 1 {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let (app, aqq, apq) = column_grams(&cols[p], &cols[q]);
                    if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (aqq - app) / (2.0 * apq);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate_pair(&mut cols, p, q, c, s);
                    rotate_pair(&mut v_cols, p, q, c, s);
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            // One extra pass to see whether the final sweep finished the job.
            let clean = (0..n - 1).all(|p| {
                (p + 1..n).all(|q| {
                    let (app, aqq, apq) = column_grams(&cols[p], &cols[q]);
                    apq.abs() <= JACOBI_TOL * (app * aqq).sqrt()
                })
            });
            if !clean {
                return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
            }
        }
    }

    // Singular values are the column norms; sort descending (stable).
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let s_max = norms[order[0]];
    let clamp = SV_CLAMP_REL * s_max;
    let mut s = Vec::with_capacity(n);
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut zero_cols = Vec::new();
    for (k, &src) in order.iter().enumerate() {
        let sigma = if norms[src] < clamp { 0.0 } else { norms[src] };
        s.push(sigma);
        for i in 0..n {
            v.set(i, k, v_cols[src][i]);
        }
        if sigma > 0.0 {
            for i in 0..m {
                u.set(i, k, cols[src][i] / sigma);
            }
        } else {
            zero_cols.push(k);
        }
    }
    for k in zero_cols {
        complete_orthonormal_column(&mut u, k);
    }
    Ok((u, s, v))
}

fn column_grams(cp: &[f64], cq: &[f64]) -> (f64, f64, f64) {
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for (x, y) in cp.iter().zip(cq) {
        app += x * x;
        aqq += y * y;
        apq += x * y;
    }
    (app, aqq, apq)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills column `k` of `u` with a unit vector orthogonal to every other
/// filled column. Candidates are standard basis vectors tried in index
/// order, so the completion is deterministic.
fn complete_orthonormal_column(u: &mut Matrix, k: usize) {
    let (m, n) = u.shape();
    for cand in 0..m {
        let mut col = vec![0.0; m];
        col[cand] = 1.0;
        // Two Gram-Schmidt passes against the other columns.
        for _ in 0..2 {
            for j in 0..n {
                if j == k {
                    continue;
                }
                let proj: f64 = (0..m).map(|i| col[i] * u.get(i, j)).sum();
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= proj * u.get(i, j);
                }
            }
        }
        let norm = dot(&col, &col).sqrt();
        if norm > 1e-3 {
            for (i, c) in col.iter().enumerate() {
                u.set(i, k, c / norm);
            }
            return;
        }
    }
    // m >= n guarantees some basis vector has a usable residual.
    unreachable!("orthonormal completion exhausted basis candidates");
}

/// Makes the largest-magnitude entry of each `u` column positive, flipping
/// the paired `v` column to preserve the product.
fn sign_normalize(u: &mut Matrix, v: &mut Matrix) {
    let (m, r) = u.shape();
    for j in 0..r {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..m {
                let x = u.get(i, j);
                u.set(i, j, -x);
            }
            for i in 0..v.rows() {
                let x = v.get(i, j);
                v.set(i, j, -x);
            }
        }
    }
}
