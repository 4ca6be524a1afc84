//! Dense matrix type and the two factorizations everything else builds on.

mod matrix;
mod qr;
mod svd;

pub use matrix::{rel_frobenius_diff, Matrix};
pub use qr::{thin_qr, QrFactors};
pub use svd::{compact_svd, orthogonal_component, SvdFactors};
