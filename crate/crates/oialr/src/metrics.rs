//! Basis-stability and weight-mixing measurements.
//!
//! A snapshot of a layer keeps two views of its weight: the semi-orthogonal
//! component `U V^T` (the basis, scale-free) and the upper-triangular `R`
//! from a thin QR (the mixing matrix). Comparing snapshots taken a fixed
//! number of epochs apart shows how fast the network's bases are still
//! rotating while the loss keeps falling.
//!
//! Weights are oriented tall (rows >= cols) before measuring, wide weights
//! by transposition, so the QR step is always defined. Both metrics are
//! invariant under that consistent choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::LowRankWeight;
use crate::linalg::{orthogonal_component, thin_qr, Matrix};

/// Denominator used for the basis-stability trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityNorm {
    /// min(rank_i, rank_j): self-stability is exactly 1 even for tall
    /// weights. The default.
    MinRank,
    /// Row count of the (tall-oriented) weight. Self-stability of a tall
    /// weight is rank/rows < 1; kept as a compatibility mode.
    RowDim,
}

#[derive(Debug, Clone)]
pub struct SnapshotEntry {
    pub layer_id: usize,
    /// Semi-orthogonal component in tall orientation, rows >= cols.
    pub uv: Matrix,
    /// Upper-triangular mixing matrix with non-negative diagonal.
    pub r_mix: Matrix,
    pub rank: usize,
    /// Element count of the original weight, the similarity denominator.
    pub weight_elems: usize,
}

#[derive(Debug, Clone)]
pub struct BasisSnapshot {
    pub epoch: usize,
    pub entries: Vec<SnapshotEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRecord {
    pub epoch_i: usize,
    pub epoch_j: usize,
    /// `None` marks the mean-over-layers row.
    pub layer_id: Option<usize>,
    pub stability: f64,
    pub similarity: f64,
}

/// Snapshot entry for a full-rank weight.
pub fn entry_from_full(layer_id: usize, w: &Matrix) -> Result<SnapshotEntry> {
    let tall = orient_tall(w);
    let uv = orthogonal_component(&tall)?;
    let r_mix = thin_qr(&tall)?.r;
    Ok(SnapshotEntry {
        layer_id,
        uv,
        r_mix,
        rank: tall.cols(),
        weight_elems: w.rows() * w.cols(),
    })
}

/// Snapshot entry for a factored weight. The basis is `u v^T` taken
/// directly from the frozen factors, which avoids sign-flip noise from
/// re-decomposing; the mixing matrix still comes from the materialized
/// weight.
pub fn entry_from_factors(layer_id: usize, w: &LowRankWeight) -> Result<SnapshotEntry> {
    let (m, n) = w.full_shape();
    let uv = if m >= n {
        w.u().matmul_nt(w.v())?
    } else {
        w.v().matmul_nt(w.u())?
    };
    let tall = orient_tall(&w.materialize());
    let r_mix = thin_qr(&tall)?.r;
    Ok(SnapshotEntry {
        layer_id,
        uv,
        r_mix,
        rank: w.rank(),
        weight_elems: m * n,
    })
}

fn orient_tall(w: &Matrix) -> Matrix {
    if w.rows() >= w.cols() {
        w.clone()
    } else {
        w.transpose()
    }
}

/// Snapshot of every dense layer in the model, full-rank and factored
/// alike, tagged with the epoch it was taken at.
pub fn take_snapshot(model: &crate::nn::SequentialModel, epoch: usize) -> Result<BasisSnapshot> {
    let mut entries = Vec::new();
    for d in model.dense_layers() {
        let entry = match &d.mode {
            crate::nn::LayerMode::Full(w) => entry_from_full(d.layer_id, w)?,
            crate::nn::LayerMode::LowRank(w) => entry_from_factors(d.layer_id, w)?,
        };
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Internal("snapshot of a model with no dense layers".into()));
    }
    Ok(BasisSnapshot { epoch, entries })
}

/// Basis stability between two snapshot entries of the same layer:
/// `tr(uv_i * uv_j^T)` over the chosen normalizer. 1 means identical
/// bases, 0 orthogonal, negative values sign-flipped bases.
pub fn stability(a: &SnapshotEntry, b: &SnapshotEntry, norm: StabilityNorm) -> Result<f64> {
    if a.uv.shape() != b.uv.shape() {
        return Err(Error::ShapeMismatch {
            op: "stability",
            lhs: a.uv.shape(),
            rhs: b.uv.shape(),
        });
    }
    // tr(A B^T) is the elementwise dot product.
    let trace: f64 = a
        .uv
        .data()
        .iter()
        .zip(b.uv.data())
        .map(|(x, y)| x * y)
        .sum();
    let denom = match norm {
        StabilityNorm::MinRank => a.rank.min(b.rank) as f64,
        StabilityNorm::RowDim => a.uv.rows() as f64,
    };
    Ok(trace / denom)
}

/// Euclidean similarity of two mixing matrices:
/// `1 - sqrt(sum((r_i - r_j)^2) / weight_elems)`, with the element count of
/// the original weight as the denominator. 1 means identical mixing.
pub fn mixing_similarity(r_i: &Matrix, r_j: &Matrix, weight_elems: usize) -> Result<f64> {
    if r_i.shape() != r_j.shape() {
        return Err(Error::ShapeMismatch {
            op: "mixing_similarity",
            lhs: r_i.shape(),
            rhs: r_j.shape(),
        });
    }
    let sum_sq: f64 = r_i
        .data()
        .iter()
        .zip(r_j.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(1.0 - (sum_sq / weight_elems as f64).sqrt())
}

fn entry_similarity(a: &SnapshotEntry, b: &SnapshotEntry) -> Result<f64> {
    mixing_similarity(&a.r_mix, &b.r_mix, a.weight_elems)
}

/// Bounded in-memory window of snapshots, oldest evicted first. Long-range
/// history lives in the per-epoch checkpoints on disk; this window only
/// needs to span the comparison lag.
#[derive(Debug)]
pub struct SnapshotHistory {
    budget: usize,
    snapshots: Vec<BasisSnapshot>,
}

impl SnapshotHistory {
    pub fn new(budget: usize) -> Self {
        SnapshotHistory {
            budget: budget.max(1),
            snapshots: Vec::new(),
        }
    }

    pub fn push(&mut self, snap: BasisSnapshot) {
        self.snapshots.push(snap);
        if self.snapshots.len() > self.budget {
            self.snapshots.remove(0);
        }
    }

    pub fn snapshots(&self) -> &[BasisSnapshot] {
        &self.snapshots
    }

    pub fn find(&self, epoch: usize) -> Option<&BasisSnapshot> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }

    /// Compares every snapshot with the one exactly `lag` epochs earlier.
    /// Emits one record per layer plus a mean-over-layers record per pair;
    /// empty when the window holds no such pair.
    pub fn lagged_report(&self, lag: usize, norm: StabilityNorm) -> Result<Vec<StabilityRecord>> {
        let mut out = Vec::new();
        for cur in &self.snapshots {
            if cur.epoch < lag {
                continue;
            }
            let Some(prev) = self.find(cur.epoch - lag) else {
                continue;
            };
            out.extend(compare_snapshots(prev, cur, norm)?);
        }
        Ok(out)
    }
}

/// Per-layer stability/similarity records for one snapshot pair, followed
/// by the mean-over-layers record.
pub fn compare_snapshots(
    prev: &BasisSnapshot,
    cur: &BasisSnapshot,
    norm: StabilityNorm,
) -> Result<Vec<StabilityRecord>> {
    let mut out = Vec::new();
    let mut stab_sum = 0.0;
    let mut sim_sum = 0.0;
    let mut count = 0usize;
    for e_cur in &cur.entries {
        let Some(e_prev) = prev.entries.iter().find(|e| e.layer_id == e_cur.layer_id) else {
            continue;
        };
        let s = stability(e_prev, e_cur, norm)?;
        let d = entry_similarity(e_prev, e_cur)?;
        stab_sum += s;
        sim_sum += d;
        count += 1;
        out.push(StabilityRecord {
            epoch_i: prev.epoch,
            epoch_j: cur.epoch,
            layer_id: Some(e_cur.layer_id),
            stability: s,
            similarity: d,
        });
    }
    if count > 0 {
        out.push(StabilityRecord {
            epoch_i: prev.epoch,
            epoch_j: cur.epoch,
            layer_id: None,
            stability: stab_sum / count as f64,
            similarity: sim_sum / count as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::decompose_weight;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Orthonormal m x r basis from the SVD of a random matrix.
    fn random_basis(m: usize, r: usize, seed: u64) -> Matrix {
        decompose_weight(&random_matrix(m, r, seed))
            .unwrap()
            .u()
            .clone()
    }

    fn entry_with_uv(uv: Matrix, rank: usize) -> SnapshotEntry {
        let n = uv.cols();
        SnapshotEntry {
            layer_id: 0,
            uv,
            r_mix: Matrix::identity(n),
            rank,
            weight_elems: 1,
        }
    }

    #[test]
    fn self_stability_is_one() {
        for seed in 0..4 {
            let e = entry_from_full(0, &random_matrix(9, 5, seed)).unwrap();
            let s = stability(&e, &e, StabilityNorm::MinRank).unwrap();
            assert!((s - 1.0).abs() <= 1e-12, "{s}");
        }
    }

    #[test]
    fn stability_is_symmetric() {
        let a = entry_from_full(0, &random_matrix(8, 4, 3)).unwrap();
        let b = entry_from_full(0, &random_matrix(8, 4, 4)).unwrap();
        let ab = stability(&a, &b, StabilityNorm::MinRank).unwrap();
        let ba = stability(&b, &a, StabilityNorm::MinRank).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn negated_basis_gives_minus_one() {
        // 4x2 embedded identity basis, then both columns negated.
        let uv = Matrix::from_rows(&[
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
        ]);
        let neg = uv.scale(-1.0);
        let a = entry_with_uv(uv, 2);
        let b = entry_with_uv(neg, 2);
        assert_eq!(stability(&a, &b, StabilityNorm::MinRank).unwrap(), -1.0);
    }

    #[test]
    fn independent_bases_match_trace_oracle_and_stay_small() {
        let u1 = random_basis(64, 8, 10);
        let u2 = random_basis(64, 8, 11);
        let v = random_basis(8, 8, 12);
        let uv1 = u1.matmul_nt(&v).unwrap();
        let uv2 = u2.matmul_nt(&v).unwrap();
        let a = entry_with_uv(uv1.clone(), 8);
        let b = entry_with_uv(uv2.clone(), 8);
        let s = stability(&a, &b, StabilityNorm::MinRank).unwrap();
        // Oracle: materialize the product and sum its diagonal.
        let prod = uv1.matmul_nt(&uv2).unwrap();
        let trace: f64 = (0..64).map(|i| prod.get(i, i)).sum();
        assert!((s - trace / 8.0).abs() <= 1e-12);
        assert!(s.abs() < 0.5, "independent bases should not align: {s}");
    }

    #[test]
    fn stability_scale_invariant() {
        let w = random_matrix(10, 6, 20);
        let base = entry_from_full(0, &w).unwrap();
        for c in [0.5, 3.0] {
            let scaled = entry_from_full(0, &w.scale(c)).unwrap();
            let s = stability(&base, &scaled, StabilityNorm::MinRank).unwrap();
            assert!((s - 1.0).abs() <= 1e-8, "c={c}: {s}");
        }
    }

    #[test]
    fn row_dim_mode_matches_raw_trace_over_rows() {
        let uv = Matrix::from_rows(&[
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
        ]);
        let e = entry_with_uv(uv, 2);
        assert_eq!(stability(&e, &e, StabilityNorm::RowDim).unwrap(), 0.5);
    }

    #[test]
    fn stability_shape_mismatch_rejected() {
        let a = entry_from_full(0, &random_matrix(6, 3, 1)).unwrap();
        let b = entry_from_full(0, &random_matrix(6, 4, 2)).unwrap();
        assert!(stability(&a, &b, StabilityNorm::MinRank).is_err());
    }

    #[test]
    fn identical_mixing_similarity_is_exactly_one() {
        let r = thin_qr(&random_matrix(7, 4, 5)).unwrap().r;
        assert_eq!(mixing_similarity(&r, &r, 28).unwrap(), 1.0);
    }

    #[test]
    fn single_entry_mixing_example() {
        let zero = Matrix::zeros(3, 3);
        let mut single = Matrix::zeros(3, 3);
        single.set(0, 2, 3.0);
        let d = mixing_similarity(&zero, &single, 9).unwrap();
        assert!((d - 0.0).abs() <= 1e-15);
    }

    #[test]
    fn mixing_similarity_matches_loop_oracle_and_decreases() {
        let r1 = thin_qr(&random_matrix(8, 5, 30)).unwrap().r;
        let r2 = thin_qr(&random_matrix(8, 5, 31)).unwrap().r;
        let d = mixing_similarity(&r1, &r2, 40).unwrap();
        let mut sum = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let diff = r1.get(i, j) - r2.get(i, j);
                sum += diff * diff;
            }
        }
        assert!((d - (1.0 - (sum / 40.0).sqrt())).abs() <= 1e-12);

        // Growing the perturbation strictly lowers the similarity.
        let mut prev = 1.0;
        for k in 1..5 {
            let perturbed = r1.sub(&r2.scale(0.1 * k as f64)).unwrap();
            let dk = mixing_similarity(&r1, &perturbed, 40).unwrap();
            assert!(dk < prev);
            prev = dk;
        }
    }

    #[test]
    fn full_and_factored_paths_agree_after_decomposition() {
        let w = random_matrix(12, 7, 40);
        let full = entry_from_full(3, &w).unwrap();
        let factored = entry_from_factors(3, &decompose_weight(&w).unwrap()).unwrap();
        assert_eq!(full.rank, factored.rank);
        assert_eq!(full.weight_elems, factored.weight_elems);
        let uv_diff = full.uv.sub(&factored.uv).unwrap().frobenius_norm();
        assert!(uv_diff <= 1e-8, "{uv_diff}");
        let r_diff = full.r_mix.sub(&factored.r_mix).unwrap().frobenius_norm();
        assert!(r_diff <= 1e-8, "{r_diff}");
    }

    #[test]
    fn wide_weights_are_measured_transposed() {
        let w = random_matrix(3, 9, 50);
        let e = entry_from_full(0, &w).unwrap();
        assert_eq!(e.uv.shape(), (9, 3));
        assert_eq!(e.r_mix.shape(), (3, 3));
        assert_eq!(e.rank, 3);
        assert_eq!(e.weight_elems, 27);
        assert!((stability(&e, &e, StabilityNorm::MinRank).unwrap() - 1.0).abs() <= 1e-12);
        // Same entry via the factored path.
        let f = entry_from_factors(0, &decompose_weight(&w).unwrap()).unwrap();
        assert_eq!(f.uv.shape(), (9, 3));
        assert!(e.uv.sub(&f.uv).unwrap().frobenius_norm() <= 1e-8);
    }

    #[test]
    fn single_snapshot_history_reports_nothing() {
        let mut h = SnapshotHistory::new(8);
        h.push(BasisSnapshot {
            epoch: 0,
            entries: vec![entry_from_full(0, &random_matrix(5, 3, 60)).unwrap()],
        });
        assert!(h
            .lagged_report(1, StabilityNorm::MinRank)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn frozen_network_reports_ones() {
        let w = random_matrix(6, 4, 61);
        let mut h = SnapshotHistory::new(8);
        for epoch in 0..3 {
            h.push(BasisSnapshot {
                epoch,
                entries: vec![
                    entry_from_full(0, &w).unwrap(),
                    entry_from_full(1, &w.transpose()).unwrap(),
                ],
            });
        }
        let records = h.lagged_report(1, StabilityNorm::MinRank).unwrap();
        // Two pairs (0,1) and (1,2), three records each.
        assert_eq!(records.len(), 6);
        for r in &records {
            assert!((r.stability - 1.0).abs() <= 1e-12);
            assert!((r.similarity - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn lagged_report_matches_pairwise_calls() {
        let mut h = SnapshotHistory::new(8);
        let snaps: Vec<BasisSnapshot> = (0..3)
            .map(|epoch| BasisSnapshot {
                epoch,
                entries: vec![
                    entry_from_full(0, &random_matrix(7, 4, 70 + epoch as u64)).unwrap(),
                    entry_from_full(1, &random_matrix(5, 5, 80 + epoch as u64)).unwrap(),
                ],
            })
            .collect();
        for s in &snaps {
            h.push(s.clone());
        }
        let records = h.lagged_report(2, StabilityNorm::MinRank).unwrap();
        // Only the (0, 2) pair is 2 epochs apart.
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!((r.epoch_i, r.epoch_j), (0, 2));
        }
        let s0 = stability(
            &snaps[0].entries[0],
            &snaps[2].entries[0],
            StabilityNorm::MinRank,
        )
        .unwrap();
        assert_eq!(records[0].stability, s0);
        let mean = (records[0].stability + records[1].stability) / 2.0;
        assert_eq!(records[2].layer_id, None);
        assert!((records[2].stability - mean).abs() <= 1e-15);
    }

    #[test]
    fn model_snapshot_covers_every_dense_layer() {
        use crate::nn::{Activation, SequentialModel};
        let mut model = SequentialModel::mlp(&[6, 5, 4, 3], Activation::Relu, 90).unwrap();
        let before = take_snapshot(&model, 0).unwrap();
        assert_eq!(before.entries.len(), 3);
        // Converting is invisible to the basis entries at full rank.
        model.convert_to_low_rank(true, false).unwrap();
        let after = take_snapshot(&model, 1).unwrap();
        for (b, a) in before.entries.iter().zip(&after.entries) {
            assert_eq!(b.layer_id, a.layer_id);
            assert_eq!(b.uv.shape(), a.uv.shape());
            let s = stability(b, a, StabilityNorm::MinRank).unwrap();
            assert!((s - 1.0).abs() <= 1e-8, "layer {}: {s}", b.layer_id);
        }
    }

    #[test]
    fn history_evicts_beyond_budget() {
        let mut h = SnapshotHistory::new(2);
        for epoch in 0..5 {
            h.push(BasisSnapshot {
                epoch,
                entries: vec![],
            });
        }
        assert_eq!(h.snapshots().len(), 2);
        assert_eq!(h.snapshots()[0].epoch, 3);
        assert!(h.find(0).is_none());
        assert!(h.find(4).is_some());
    }
}
