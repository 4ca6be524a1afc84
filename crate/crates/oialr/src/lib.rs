//! Adaptive low-rank neural network training.
//!
//! Dense layers start as ordinary weight matrices, are re-expressed as an
//! orthogonal/diagonal product `U S V^T` partway through training, and
//! thereafter only the small square `S` factor trains. Periodic basis
//! updates rotate `U` and `V` to absorb what `S` has learned, then drop
//! singular values that fall below a cutoff, shrinking the trainable
//! parameter count while tracking the full-rank trajectory.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense matrices, one-sided Jacobi SVD, Householder QR
//! - [`factorization`]: the three-factor weight form and its basis updates
//! - [`metrics`]: orthogonal-basis stability and weight-mixing similarity
//! - [`nn`]: multilayer perceptrons with per-layer low-rank conversion
//! - [`optim`]: decoupled-weight-decay Adam and the warmup/cosine schedule
//! - [`data`]: Gaussian blob synthesis, IDX images, sliding-window CSV
//! - [`trainer`]: the training loop with its conversion/update schedule
//! - [`cli`]: run configs, checkpoints, telemetry, command entry points

pub mod cli;
pub mod data;
pub mod error;
pub mod factorization;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
