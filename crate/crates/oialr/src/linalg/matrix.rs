//! Dense row-major matrix of 64-bit floats.
//!
//! The universal numeric carrier for the crate. Storage is a flat
//! `Vec<f64>` with `data[i * cols + j] = A[i, j]`. Products over large
//! matrices parallelize across output rows; within one output entry the
//! accumulation order is fixed, so results are bit-identical regardless
//! of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Output rows below this stay on one thread.
const PAR_MIN_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. The length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Internal(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor from nested slices (tests and small fixtures).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [f64]| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ip * b_pj;
                }
            }
        };
        if m >= PAR_MIN_ROWS {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                body(i, row);
            }
        }
        Ok(out)
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.rows);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [f64]| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (x, y) in a_row.iter().zip(b_row) {
                    acc += x * y;
                }
                *o = acc;
            }
        };
        if m >= PAR_MIN_ROWS {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                body(i, row);
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.cols, self.rows, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        let body = |i: usize, out_row: &mut [f64]| {
            for (j, o) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.data[p * m + i] * rhs.data[p * n + j];
                }
                *o = acc;
            }
        };
        if m >= PAR_MIN_ROWS {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                body(i, row);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for x in &mut out.data {
            *x *= c;
        }
        out
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&rhs.data) {
            *x -= y;
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Keeps the first `k` columns.
    pub fn take_cols(&self, k: usize) -> Matrix {
        assert!(k <= self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.data[i * self.cols..i * self.cols + k]);
        }
        out
    }

    /// Keeps the leading `k`x`k` block.
    pub fn leading_block(&self, k: usize) -> Matrix {
        assert!(k <= self.rows && k <= self.cols);
        let mut out = Matrix::zeros(k, k);
        for i in 0..k {
            out.row_mut(i)
                .copy_from_slice(&self.data[i * self.cols..i * self.cols + k]);
        }
        out
    }
}

/// Relative Frobenius distance `||a - b||_F / max(||a||_F, floor)`.
pub fn rel_frobenius_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_frobenius_diff shape mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        num += (x - y) * (x - y);
        den += x * x;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}
