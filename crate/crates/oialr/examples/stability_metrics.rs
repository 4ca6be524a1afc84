//! Watch the two trajectory metrics react as a weight matrix drifts:
//! basis stability (direction of the orthogonal component) and mixing
//! similarity (the triangular factor of a thin QR).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oialr::linalg::Matrix;
use oialr::metrics::{entry_from_full, mixing_similarity, stability, StabilityNorm};

fn main() -> oialr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = Matrix::from_vec(
        20,
        8,
        (0..20 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let reference = entry_from_full(0, &w)?;

    println!("step  stability  similarity");
    for step in 0..6 {
        let entry = entry_from_full(0, &w)?;
        let s = stability(&reference, &entry, StabilityNorm::MinRank)?;
        let d = mixing_similarity(&reference.r_mix, &entry.r_mix, reference.weight_elems)?;
        println!("{step:>4}  {s:>9.6}  {d:>10.6}");

        // Random walk: each step rotates the basis a little more.
        for v in w.data_mut() {
            *v += 0.15 * rng.gen_range(-1.0..1.0);
        }
    }

    // Scaling is invisible to stability, negation flips its sign.
    let scaled = entry_from_full(0, &w.scale(3.0))?;
    let current = entry_from_full(0, &w)?;
    println!(
        "\nstability(w, 3w)  = {:+.12}",
        stability(&current, &scaled, StabilityNorm::MinRank)?
    );
    let negated = entry_from_full(0, &w.scale(-1.0))?;
    println!(
        "stability(w, -w)  = {:+.12}",
        stability(&current, &negated, StabilityNorm::MinRank)?
    );
    Ok(())
}
