//! The three-factor weight representation `W = U S V^T`.
//!
//! After a dense layer transitions to low rank, `u` and `v` are frozen
//! orthonormal bases and the square `sigma` factor is the only trainable
//! part. Training fills `sigma` with off-diagonal mass; `update_basis`
//! folds that mass back into the bases by diagonalizing `sigma`, and
//! `truncate_rank` then drops trailing singular values below a relative
//! cutoff.

use crate::error::{Error, Result};
use crate::linalg::{compact_svd, Matrix};

#[derive(Debug, Clone)]
pub struct LowRankWeight {
    /// Left basis, m x r, orthonormal columns, frozen during training.
    u: Matrix,
    /// Trainable r x r factor. Dense between basis updates; diagonal with
    /// descending non-negative entries immediately after `update_basis`.
    sigma: Matrix,
    /// Right basis, n x r, orthonormal columns, frozen during training.
    v: Matrix,
    full_shape: (usize, usize),
}

/// Expresses a dense weight as `U S V^T` at full rank min(m, n).
pub fn decompose_weight(w: &Matrix) -> Result<LowRankWeight> {
    let f = compact_svd(w)?;
    Ok(LowRankWeight {
        u: f.u,
        sigma: Matrix::diag(&f.s),
        v: f.v,
        full_shape: w.shape(),
    })
}

impl LowRankWeight {
    pub fn rank(&self) -> usize {
        self.sigma.rows()
    }

    pub fn full_shape(&self) -> (usize, usize) {
        self.full_shape
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn sigma_mut(&mut self) -> &mut Matrix {
        &mut self.sigma
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// Rebuilds factors from checkpoint tensors. Shapes must agree on a
    /// common rank; orthonormality of `u`/`v` is the writer's invariant and
    /// is not re-verified here.
    pub fn from_parts(u: Matrix, sigma: Matrix, v: Matrix) -> Result<Self> {
        let r = sigma.rows();
        if sigma.cols() != r || u.cols() != r || v.cols() != r {
            return Err(Error::ShapeMismatch {
                op: "low-rank weight assembly",
                lhs: u.shape(),
                rhs: sigma.shape(),
            });
        }
        let full_shape = (u.rows(), v.rows());
        Ok(LowRankWeight {
            u,
            sigma,
            v,
            full_shape,
        })
    }

    /// Reconstructs the full `m x n` weight `u * sigma * v^T`.
    pub fn materialize(&self) -> Matrix {
        self.u
            .matmul(&self.sigma)
            .and_then(|us| us.matmul_nt(&self.v))
            .expect("factor shapes are internally consistent")
    }

    /// Folds the trained `sigma` back into the bases: with
    /// `sigma = U' S' V'^T`, sets `u <- u U'`, `v <- v V'` and
    /// `sigma <- diag(S')`. The materialized weight is unchanged and
    /// `sigma` is diagonal descending afterwards.
    pub fn update_basis(&mut self) -> Result<()> {
        let f = compact_svd(&self.sigma)?;
        self.u = self.u.matmul(&f.u)?;
        self.v = self.v.matmul(&f.v)?;
        self.sigma = Matrix::diag(&f.s);
        Ok(())
    }

    /// Drops singular values below `beta` times the largest. Call only when
    /// `sigma` is diagonal descending (directly after `update_basis`).
    /// Keeps at least rank 1. Returns the new rank.
    pub fn truncate_rank(&mut self, beta: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&beta) || beta <= 0.0 {
            return Err(Error::Config(format!(
                "rank cutoff beta must lie in (0, 1), got {beta}"
            )));
        }
        let r = self.rank();
        let s_max = self.sigma.get(0, 0);
        let cutoff = beta * s_max;
        let mut keep = (0..r)
            .take_while(|&i| self.sigma.get(i, i) >= cutoff)
            .count();
        if keep == 0 {
            keep = 1;
        }
        if keep < r {
            self.u = self.u.take_cols(keep);
            self.v = self.v.take_cols(keep);
            self.sigma = self.sigma.leading_block(keep);
        }
        Ok(keep)
    }

    /// (trainable, frozen) element counts: r^2 trainable in `sigma`,
    /// r(m + n) frozen across the two bases.
    pub fn param_counts(&self) -> (usize, usize) {
        let (m, n) = self.full_shape;
        let r = self.rank();
        (r * r, r * (m + n))
    }
}

/// Matrix shape for a >= 2-D tensor: the first dimension keeps the rows,
/// trailing dimensions multiply into the columns. Row-major element layout
/// is untouched, so restoring the original shape is metadata-only.
pub fn matricize(dims: &[usize]) -> Result<(usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "matricize needs at least 2 dimensions, got {:?}",
            dims
        )));
    }
    Ok((dims[0], dims[1..].iter().product()))
}
