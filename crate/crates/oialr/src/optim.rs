//! Adam with decoupled weight decay, plus the warmup/cosine learning-rate
//! schedule.
//!
//! State is kept per named tensor so checkpoints can carry it. Frozen
//! tensors (the bases of a factored weight) are simply never stepped;
//! the trainer enforces that structurally by only handing trainable
//! slices to `step_tensor`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl TensorState {
    pub fn zeros(len: usize) -> Self {
        TensorState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// What happens to a square factor's optimizer state when a basis update
/// rotates its coordinate system (and truncation may shrink it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankChangeMode {
    /// Zero both moments and restart the step count. The default: the old
    /// moments live in the pre-rotation coordinates and elementwise second
    /// moments have no exact image under rotation.
    Reset,
    /// Keep the top-left block of both moments at the new rank. Step count
    /// is preserved.
    Slice,
}

#[derive(Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    states: BTreeMap<String, TensorState>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            states: BTreeMap::new(),
        }
    }

    /// One update on a flat tensor. Decay is decoupled: `p -= lr * wd * p`
    /// happens before the moment-based step, and only when `apply_decay`
    /// is set (weights yes, biases no).
    pub fn step_tensor(
        &mut self,
        name: &str,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        apply_decay: bool,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Internal(format!(
                "optimizer step on '{name}': {} params vs {} gradient entries",
                params.len(),
                grads.len()
            )));
        }
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| TensorState::zeros(params.len()));
        if state.m.len() != params.len() {
            return Err(Error::Internal(format!(
                "optimizer state for '{name}' has length {}, tensor has {}",
                state.m.len(),
                params.len()
            )));
        }
        if apply_decay && self.cfg.weight_decay != 0.0 {
            let shrink = lr * self.cfg.weight_decay;
            for p in params.iter_mut() {
                *p -= shrink * *p;
            }
        }
        state.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(state.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(state.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
            *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }

    /// Applies the rank-change policy to one square factor's state when a
    /// basis update fires. Tensors without state (never stepped) and all
    /// other tensors are untouched.
    pub fn apply_rank_change(
        &mut self,
        name: &str,
        old_rank: usize,
        new_rank: usize,
        mode: RankChangeMode,
    ) {
        let Some(state) = self.states.get_mut(name) else {
            return;
        };
        *state = reshape_state_on_rank_change(state, old_rank, new_rank, mode);
    }

    pub fn state(&self, name: &str) -> Option<&TensorState> {
        self.states.get(name)
    }

    /// Installs state directly (checkpoint restore).
    pub fn set_state(&mut self, name: String, state: TensorState) {
        self.states.insert(name, state);
    }

    /// Named states in deterministic (sorted) order.
    pub fn states(&self) -> impl Iterator<Item = (&String, &TensorState)> {
        self.states.iter()
    }
}

/// State transition for a square `old_rank^2` tensor shrinking (or staying)
/// at `new_rank`.
pub fn reshape_state_on_rank_change(
    state: &TensorState,
    old_rank: usize,
    new_rank: usize,
    mode: RankChangeMode,
) -> TensorState {
    debug_assert_eq!(state.m.len(), old_rank * old_rank);
    debug_assert!(new_rank <= old_rank);
    match mode {
        RankChangeMode::Reset => TensorState::zeros(new_rank * new_rank),
        RankChangeMode::Slice => {
            let block = |src: &[f64]| {
                let mut out = Vec::with_capacity(new_rank * new_rank);
                for i in 0..new_rank {
                    out.extend_from_slice(&src[i * old_rank..i * old_rank + new_rank]);
                }
                out
            };
            TensorState {
                m: block(&state.m),
                v: block(&state.v),
                t: state.t,
            }
        }
    }
}

/// Warmup then cosine decay, stepped per optimizer step rather than per
/// epoch so short desk runs still sweep the whole curve.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub k_decay: f64,
}

impl LrSchedule {
    /// Learning rate for a 0-based (epoch, step-within-epoch) position.
    /// Linear from `warmup_lr` to `base_lr` across the warmup steps, then
    /// `min_lr + (base_lr - min_lr) * (1 + cos(pi * tau^k)) / 2` with
    /// `tau` running from 0 to exactly 1 at the final step.
    pub fn lr_at(&self, epoch: usize, step_within_epoch: usize, steps_per_epoch: usize) -> f64 {
        let s = epoch * steps_per_epoch + step_within_epoch;
        let total = self.total_epochs * steps_per_epoch;
        let warmup = self.warmup_epochs * steps_per_epoch;
        if s < warmup {
            let frac = s as f64 / warmup as f64;
            return self.warmup_lr + (self.base_lr - self.warmup_lr) * frac;
        }
        if total <= warmup + 1 {
            // Degenerate: no room for a decay curve.
            return if s + 1 >= total { self.min_lr } else { self.base_lr };
        }
        let tau = ((s - warmup) as f64 / (total - 1 - warmup) as f64).clamp(0.0, 1.0);
        let shaped = tau.powf(self.k_decay);
        self.min_lr
            + (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * shaped).cos()) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_defaults(total_epochs: usize) -> LrSchedule {
        LrSchedule {
            base_lr: 0.001,
            min_lr: 0.00001,
            warmup_lr: 0.00001,
            warmup_epochs: 10,
            total_epochs,
            k_decay: 1.0,
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_moments_untouched() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = vec![1.5, -2.0];
        opt.step_tensor("w", &mut p, &[0.0, 0.0], 0.1, true).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        let s = opt.state("w").unwrap();
        assert!(s.m.iter().all(|x| *x == 0.0));
        assert!(s.v.iter().all(|x| *x == 0.0));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn single_step_closed_form() {
        // t=1: m_hat = g, v_hat = g^2, so dp = -lr * g / (|g| + eps).
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = vec![1.0];
        opt.step_tensor("w", &mut p, &[1.0], 0.1, true).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() <= 1e-15, "{} vs {expected}", p[0]);
    }

    /// Straight-line textbook Adam, an independent reference path.
    fn reference_adam(
        p0: &[f64],
        grads: &[Vec<f64>],
        lr: f64,
        b1: f64,
        b2: f64,
        eps: f64,
    ) -> Vec<f64> {
        let mut p = p0.to_vec();
        let mut m = vec![0.0; p.len()];
        let mut v = vec![0.0; p.len()];
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        p
    }

    #[test]
    fn matches_reference_adam_without_decay() {
        let grads: Vec<Vec<f64>> = (0..10)
            .map(|k| vec![0.3 * (k as f64 + 1.0).sin(), -0.7 + 0.05 * k as f64, 1.2])
            .collect();
        let p0 = [0.4, -1.1, 2.0];
        let expected = reference_adam(&p0, &grads, 0.01, 0.9, 0.999, 1e-8);

        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = p0.to_vec();
        for g in &grads {
            opt.step_tensor("w", &mut p, g, 0.01, true).unwrap();
        }
        for (a, b) in p.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn decay_shrinks_before_the_moment_update() {
        let wd = 0.1;
        let lr = 0.05;
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        });
        let mut p = vec![2.0];
        opt.step_tensor("w", &mut p, &[0.5], lr, true).unwrap();
        // Decoupled: shrink first, Adam step on the untouched gradient.
        let adam_only = reference_adam(&[0.0], &[vec![0.5]], lr, 0.9, 0.999, 1e-8)[0];
        let expected = 2.0 * (1.0 - lr * wd) + adam_only;
        assert!((p[0] - expected).abs() <= 1e-15);

        // Biases opt out of decay.
        let mut b = vec![2.0];
        let mut opt2 = AdamW::new(AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        });
        opt2.step_tensor("b", &mut b, &[0.5], lr, false).unwrap();
        assert!((b[0] - (2.0 + adam_only)).abs() <= 1e-15);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = vec![0.0; 3];
        assert!(opt.step_tensor("w", &mut p, &[1.0, 2.0], 0.1, true).is_err());
    }

    #[test]
    fn reset_mode_zeroes_state() {
        let state = TensorState {
            m: (0..9).map(|i| i as f64).collect(),
            v: (0..9).map(|i| (i * i) as f64).collect(),
            t: 42,
        };
        let out = reshape_state_on_rank_change(&state, 3, 2, RankChangeMode::Reset);
        assert_eq!(out, TensorState::zeros(4));
    }

    #[test]
    fn slice_mode_keeps_leading_block() {
        // 3x3 moment laid out row-major; top-left 2x2 is [0,1,3,4].
        let state = TensorState {
            m: (0..9).map(|i| i as f64).collect(),
            v: (0..9).map(|i| 10.0 + i as f64).collect(),
            t: 7,
        };
        let out = reshape_state_on_rank_change(&state, 3, 2, RankChangeMode::Slice);
        assert_eq!(out.m, vec![0.0, 1.0, 3.0, 4.0]);
        assert_eq!(out.v, vec![10.0, 11.0, 13.0, 14.0]);
        assert_eq!(out.t, 7);
    }

    #[test]
    fn rank_change_leaves_other_tensors_alone() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut sigma = vec![0.5; 9];
        let mut bias = vec![0.1; 4];
        opt.step_tensor("l0.sigma", &mut sigma, &[0.2; 9], 0.01, true)
            .unwrap();
        opt.step_tensor("l0.bias", &mut bias, &[0.3; 4], 0.01, false)
            .unwrap();
        let bias_state = opt.state("l0.bias").unwrap().clone();
        opt.apply_rank_change("l0.sigma", 3, 2, RankChangeMode::Reset);
        assert_eq!(opt.state("l0.sigma").unwrap().m.len(), 4);
        assert_eq!(opt.state("l0.bias").unwrap(), &bias_state);
        // Absent state is a no-op, not an insert.
        opt.apply_rank_change("l1.sigma", 5, 3, RankChangeMode::Reset);
        assert!(opt.state("l1.sigma").is_none());
    }

    #[test]
    fn schedule_endpoints() {
        let sched = table_defaults(15);
        let spe = 20;
        assert_eq!(sched.lr_at(0, 0, spe), 0.00001);
        // First step after warmup is exactly base_lr.
        assert!((sched.lr_at(10, 0, spe) - 0.001).abs() <= 1e-12);
        // Final step lands exactly on min_lr.
        assert!((sched.lr_at(14, spe - 1, spe) - 0.00001).abs() <= 1e-9);
    }

    #[test]
    fn warmup_is_linear_and_joint_is_continuous() {
        let sched = table_defaults(20);
        let spe = 10;
        let warmup_steps = 10 * spe;
        // Halfway through warmup.
        let mid = sched.lr_at(5, 0, spe);
        assert!((mid - (0.00001 + (0.001 - 0.00001) * 0.5)).abs() <= 1e-15);
        // Jump across the boundary is one warmup increment, no cliff.
        let before = sched.lr_at(9, spe - 1, spe);
        let after = sched.lr_at(10, 0, spe);
        let increment = (0.001 - 0.00001) / warmup_steps as f64;
        assert!((after - before) <= increment + 1e-12);
    }

    #[test]
    fn cosine_is_monotone_non_increasing_with_k1() {
        let sched = table_defaults(15);
        let spe = 7;
        let mut prev = f64::INFINITY;
        for epoch in 10..15 {
            for step in 0..spe {
                let lr = sched.lr_at(epoch, step, spe);
                assert!(lr <= prev + 1e-15);
                prev = lr;
            }
        }
    }

    #[test]
    fn k_decay_above_one_holds_lr_higher_early() {
        let mut k1 = table_defaults(20);
        k1.warmup_epochs = 0;
        let mut k2 = k1.clone();
        k2.k_decay = 2.0;
        // Early in the run tau^2 < tau, so the k=2 curve sits above k=1.
        let a = k1.lr_at(2, 0, 10);
        let b = k2.lr_at(2, 0, 10);
        assert!(b > a, "{b} vs {a}");
        // Both still land on min_lr at the end.
        assert!((k2.lr_at(19, 9, 10) - k2.min_lr).abs() <= 1e-9);
    }

    #[test]
    fn all_warmup_run_never_reaches_cosine() {
        let mut sched = table_defaults(10);
        sched.warmup_epochs = 10;
        let lr = sched.lr_at(9, 9, 10);
        assert!(lr < sched.base_lr);
        assert!(lr > sched.warmup_lr);
    }
}
