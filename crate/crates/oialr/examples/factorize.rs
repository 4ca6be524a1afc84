//! Factor a small matrix with the compact SVD and thin QR, then check the
//! numbers the rest of the crate leans on: reconstruction, orthonormality,
//! and the polar factor.

use oialr::linalg::{compact_svd, orthogonal_component, rel_frobenius_diff, thin_qr, Matrix};

fn main() -> oialr::Result<()> {
    let w = Matrix::from_rows(&[
        &[4.0, 1.0, -2.0],
        &[2.0, 5.0, 0.5],
        &[-1.0, 0.0, 3.0],
        &[0.5, -2.0, 1.0],
        &[3.0, 2.0, -1.0],
    ]);
    println!("input: {}x{}", w.rows(), w.cols());

    let f = compact_svd(&w)?;
    println!("singular values: {:?}", f.s);
    println!(
        "svd reconstruction error: {:.3e}",
        rel_frobenius_diff(&f.reconstruct(), &w)
    );

    // U^T U should be the identity; measure the worst entry.
    let gram = f.u.matmul_tn(&f.u)?;
    let mut worst = 0.0f64;
    for r in 0..gram.rows() {
        for c in 0..gram.cols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((gram.get(r, c) - target).abs());
        }
    }
    println!("u orthonormality defect: {:.3e}", worst);

    let qr = thin_qr(&w)?;
    println!(
        "qr reconstruction error: {:.3e}",
        rel_frobenius_diff(&qr.q.matmul(&qr.r)?, &w)
    );
    println!(
        "r diagonal (non-negative by convention): {:?}",
        (0..qr.r.cols()).map(|i| qr.r.get(i, i)).collect::<Vec<_>>()
    );

    // The polar factor keeps direction and forgets magnitude: scaling the
    // input does not change it.
    let uv = orthogonal_component(&w)?;
    let uv_scaled = orthogonal_component(&w.scale(2.5))?;
    println!(
        "polar factor scale invariance: {:.3e}",
        rel_frobenius_diff(&uv, &uv_scaled)
    );
    Ok(())
}
