//! The life cycle of a factored weight: decompose, drift, refactor,
//! truncate. This is the per-layer half of the training scheme, run by
//! hand on one matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oialr::factorization::decompose_weight;
use oialr::linalg::{rel_frobenius_diff, Matrix};

fn main() -> oialr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = Matrix::from_vec(
        24,
        16,
        (0..24 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let mut low = decompose_weight(&w)?;
    let (trainable, frozen) = low.param_counts();
    println!(
        "decomposed {}x{} -> rank {} ({} trainable + {} frozen params)",
        24,
        16,
        low.rank(),
        trainable,
        frozen
    );
    println!(
        "materialization error: {:.3e}",
        rel_frobenius_diff(&low.materialize(), &w)
    );

    // Training perturbs the square factor; the bases go stale.
    for i in 0..low.rank() {
        for j in 0..low.rank() {
            let old = low.sigma().get(i, j);
            let nudge = 0.05 * rng.gen_range(-1.0..1.0);
            low.sigma_mut().set(i, j, old + nudge);
        }
    }
    let drifted = low.materialize();

    // Refactoring absorbs the drift into fresh orthonormal bases without
    // moving the represented weight.
    low.update_basis()?;
    println!(
        "basis refresh preserved the product to {:.3e}",
        rel_frobenius_diff(&low.materialize(), &drifted)
    );

    let before = low.rank();
    let kept = low.truncate_rank(0.35)?;
    println!("truncation at beta=0.35: rank {before} -> {kept}");
    println!(
        "truncated materialization error vs drifted weight: {:.3e}",
        rel_frobenius_diff(&low.materialize(), &drifted)
    );
    let (trainable, frozen) = low.param_counts();
    println!("params now: {trainable} trainable + {frozen} frozen");
    Ok(())
}
