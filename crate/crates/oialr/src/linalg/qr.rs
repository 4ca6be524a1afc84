//! Thin QR decomposition via Householder reflections.
//!
//! `thin_qr` on a tall m x n matrix returns `Q` (m x n, orthonormal
//! columns) and `R` (n x n, upper triangular with non-negative diagonal).
//! The non-negative diagonal makes the factorization unique for
//! full-column-rank input, which downstream weight-comparison metrics rely
//! on.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

pub fn thin_qr(a: &Matrix) -> Result<QrFactors> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::ShapeMismatch {
            op: "thin_qr (requires rows >= cols)",
            lhs: (m, n),
            rhs: (n, n),
        });
    }
    if !a.all_finite() {
        return Err(Error::NonFiniteInput { op: "thin_qr" });
    }

    let mut work = a.clone();
    // Householder vectors, one per column, stored as full-length columns
    // with zeros above the pivot.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v = vec![0.0; m];
        let mut norm2 = 0.0;
        for i in k..m {
            let x = work.get(i, k);
            v[i] = x;
            norm2 += x * x;
        }
        let norm = norm2.sqrt();
        if norm == 0.0 {
            // Column already zero below and at the pivot; no reflection.
            reflectors.push(vec![0.0; m]);
            continue;
        }
        // v = x + sign(x_k) ||x|| e_k avoids cancellation.
        let alpha = if v[k] >= 0.0 { norm } else { -norm };
        v[k] += alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            reflectors.push(vec![0.0; m]);
            continue;
        }
        // Apply H = I - 2 v v^T / (v^T v) to the remaining columns.
        for j in k..n {
            let mut proj = 0.0;
            for i in k..m {
                proj += v[i] * work.get(i, j);
            }
            let factor = 2.0 * proj / vnorm2;
            for i in k..m {
                let x = work.get(i, j);
                work.set(i, j, x - factor * v[i]);
            }
        }
        reflectors.push(v);
    }

    // R is the leading n x n block of the transformed matrix.
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r.set(i, j, work.get(i, j));
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q.set(j, j, 1.0);
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut proj = 0.0;
            for i in k..m {
                proj += v[i] * q.get(i, j);
            }
            let factor = 2.0 * proj / vnorm2;
            for i in k..m {
                let x = q.get(i, j);
                q.set(i, j, x - factor * v[i]);
            }
        }
    }

    // Flip signs so every diagonal entry of R is non-negative.
    for k in 0..n {
        if r.get(k, k) < 0.0 {
            for j in k..n {
                let x = r.get(k, j);
                r.set(k, j, -x);
            }
            for i in 0..m {
                let x = q.get(i, k);
                q.set(i, k, -x);
            }
        }
    }

    Ok(QrFactors { q, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Classical Gram-Schmidt with one re-orthogonalization pass, an
    /// independent oracle for full-column-rank inputs where thin QR with a
    /// non-negative diagonal is unique.
    fn gram_schmidt_qr(a: &Matrix) -> (Matrix, Matrix) {
        let (m, n) = a.shape();
        let mut q = Matrix::zeros(m, n);
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            let mut col: Vec<f64> = (0..m).map(|i| a.get(i, j)).collect();
            for _ in 0..2 {
                for k in 0..j {
                    let proj: f64 = (0..m).map(|i| col[i] * q.get(i, k)).sum();
                    for (i, c) in col.iter_mut().enumerate() {
                        *c -= proj * q.get(i, k);
                    }
                }
            }
            // Recompute R against the original column for the oracle.
            let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            for i in 0..m {
                q.set(i, j, col[i] / norm);
            }
            for k in 0..=j {
                let proj: f64 = (0..m).map(|i| a.get(i, j) * q.get(i, k)).sum();
                r.set(k, j, proj);
            }
        }
        (q, r)
    }

    #[test]
    fn reconstructs_and_orthonormal() {
        for seed in [1u64, 2, 3] {
            let a = random_matrix(8, 5, seed);
            let f = thin_qr(&a).unwrap();
            let qr = f.q.matmul(&f.r).unwrap();
            assert!(rel_frobenius_diff(&qr, &a) <= 1e-10);
            let gram = f.q.matmul_tn(&f.q).unwrap();
            let diff = gram.sub(&Matrix::identity(5)).unwrap().frobenius_norm();
            assert!(diff <= 1e-10);
        }
    }

    #[test]
    fn diagonal_of_r_non_negative_and_upper_triangular() {
        let a = random_matrix(6, 6, 7);
        let f = thin_qr(&a).unwrap();
        for i in 0..6 {
            assert!(f.r.get(i, i) >= 0.0);
            for j in 0..i {
                assert_eq!(f.r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn matches_gram_schmidt_oracle() {
        let a = random_matrix(7, 4, 13);
        let f = thin_qr(&a).unwrap();
        let (gq, gr) = gram_schmidt_qr(&a);
        assert!(rel_frobenius_diff(&f.r, &gr) <= 1e-8);
        assert!(rel_frobenius_diff(&f.q, &gq) <= 1e-8);
    }

    #[test]
    fn square_orthogonal_input_gives_identity_r() {
        // Rotation by 0.3 radians.
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let a = Matrix::from_rows(&[&[c, -s], &[s, c]]);
        let f = thin_qr(&a).unwrap();
        assert!(rel_frobenius_diff(&f.r, &Matrix::identity(2)) <= 1e-12);
        assert!(rel_frobenius_diff(&f.q, &a) <= 1e-12);
    }

    #[test]
    fn wide_input_rejected() {
        let a = Matrix::zeros(2, 5);
        assert!(matches!(
            thin_qr(&a),
            Err(crate::error::Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rank_deficient_input_still_factors() {
        // Third column is the sum of the first two.
        let mut a = random_matrix(6, 3, 17);
        for i in 0..6 {
            let s = a.get(i, 0) + a.get(i, 1);
            a.set(i, 2, s);
        }
        let f = thin_qr(&a).unwrap();
        let qr = f.q.matmul(&f.r).unwrap();
        assert!(rel_frobenius_diff(&qr, &a) <= 1e-10);
    }

    #[test]
    fn deterministic() {
        let a = random_matrix(9, 4, 23);
        let f1 = thin_qr(&a).unwrap();
        let f2 = thin_qr(&a).unwrap();
        assert_eq!(f1.q.data(), f2.q.data());
        assert_eq!(f1.r.data(), f2.r.data());
    }
}
