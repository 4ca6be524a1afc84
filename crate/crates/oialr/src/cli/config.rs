//! Run configuration files.
//!
//! Strict JSON: unknown keys are rejected so a typo like "betta" fails
//! loudly instead of silently training with a default. Hyperparameter key
//! names follow the usual experiment-table vocabulary
//! (`sigma_cutoff_fraction`, `stability_frequency`, `delay`,
//! `full_rank_first_layer`, ...).

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::data::{load_csv_series, load_idx, load_idx_with_test, synth_blobs, Dataset};
use crate::error::{Error, Result};
use crate::metrics::StabilityNorm;
use crate::nn::{Activation, SequentialModel};
use crate::optim::{AdamWConfig, LrSchedule, RankChangeMode};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// One struct for every dataset kind; `kind` selects which fields apply
/// and the rest must stay absent. A tagged enum would let serde skip the
/// unknown-key check inside variants.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: String,
    pub classes: Option<usize>,
    pub dims: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub spread: Option<f64>,
    pub data_seed: Option<u64>,
    pub images: Option<String>,
    pub labels: Option<String>,
    pub test_images: Option<String>,
    pub test_labels: Option<String>,
    pub path: Option<String>,
    pub input_len: Option<usize>,
    pub pred_len: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Conversion step; omitted means one third of the run.
    #[serde(default)]
    pub delay: Option<usize>,
    /// Steps between basis updates; omitted means once per epoch.
    #[serde(default)]
    pub stability_frequency: Option<usize>,
    #[serde(default = "default_beta")]
    pub sigma_cutoff_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub full_rank_first_layer: bool,
    #[serde(default)]
    pub full_rank_last_layer: bool,
    #[serde(default)]
    pub start_low_rank: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_min_lr")]
    pub min_learning_rate: f64,
    #[serde(default = "default_min_lr")]
    pub warmup_lr: f64,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default = "default_k_decay")]
    pub lr_k_decay: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub label_smoothing: f64,
    #[serde(default = "default_snapshot_lag")]
    pub snapshot_lag: usize,
    #[serde(default = "default_one")]
    pub stability_every: usize,
    #[serde(default = "default_state_mode")]
    pub optimizer_state_mode: RankChangeMode,
    #[serde(default = "default_norm")]
    pub stability_norm: StabilityNorm,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_beta() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    0.1
}
fn default_lr() -> f64 {
    0.001
}
fn default_min_lr() -> f64 {
    0.00001
}
fn default_warmup_epochs() -> usize {
    10
}
fn default_k_decay() -> f64 {
    1.0
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_snapshot_lag() -> usize {
    5
}
fn default_one() -> usize {
    1
}
fn default_state_mode() -> RankChangeMode {
    RankChangeMode::Reset
}
fn default_norm() -> StabilityNorm {
    StabilityNorm::MinRank
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn build_model(&self, seed: u64) -> Result<SequentialModel> {
        SequentialModel::mlp(&self.model.widths, self.model.activation, seed)
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        let spec = &self.dataset;
        let need = |field: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "dataset kind '{}' requires '{field}'",
                    spec.kind
                )))
            }
        };
        let forbid = |field: &str, absent: bool| -> Result<()> {
            if absent {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "'{field}' does not apply to dataset kind '{}'",
                    spec.kind
                )))
            }
        };
        match spec.kind.as_str() {
            "blobs" => {
                need("classes", spec.classes.is_some())?;
                need("dims", spec.dims.is_some())?;
                need("samples_per_class", spec.samples_per_class.is_some())?;
                forbid("images", spec.images.is_none())?;
                forbid("labels", spec.labels.is_none())?;
                forbid("test_images", spec.test_images.is_none())?;
                forbid("test_labels", spec.test_labels.is_none())?;
                forbid("path", spec.path.is_none())?;
                forbid("input_len", spec.input_len.is_none())?;
                forbid("pred_len", spec.pred_len.is_none())?;
                synth_blobs(
                    spec.classes.unwrap(),
                    spec.dims.unwrap(),
                    spec.samples_per_class.unwrap(),
                    spec.spread.unwrap_or(0.5),
                    spec.data_seed.unwrap_or(0),
                )
            }
            "idx" => {
                need("images", spec.images.is_some())?;
                need("labels", spec.labels.is_some())?;
                forbid("classes", spec.classes.is_none())?;
                forbid("dims", spec.dims.is_none())?;
                forbid("samples_per_class", spec.samples_per_class.is_none())?;
                forbid("spread", spec.spread.is_none())?;
                forbid("data_seed", spec.data_seed.is_none())?;
                forbid("path", spec.path.is_none())?;
                forbid("input_len", spec.input_len.is_none())?;
                forbid("pred_len", spec.pred_len.is_none())?;
                let images = Path::new(spec.images.as_ref().unwrap());
                let labels = Path::new(spec.labels.as_ref().unwrap());
                match (&spec.test_images, &spec.test_labels) {
                    (Some(ti), Some(tl)) => {
                        load_idx_with_test(images, labels, Path::new(ti), Path::new(tl))
                    }
                    (None, None) => load_idx(images, labels),
                    _ => Err(Error::Config(
                        "test_images and test_labels must be given together".into(),
                    )),
                }
            }
            "csv_series" => {
                need("path", spec.path.is_some())?;
                need("input_len", spec.input_len.is_some())?;
                need("pred_len", spec.pred_len.is_some())?;
                forbid("classes", spec.classes.is_none())?;
                forbid("dims", spec.dims.is_none())?;
                forbid("samples_per_class", spec.samples_per_class.is_none())?;
                forbid("spread", spec.spread.is_none())?;
                forbid("data_seed", spec.data_seed.is_none())?;
                forbid("images", spec.images.is_none())?;
                forbid("labels", spec.labels.is_none())?;
                forbid("test_images", spec.test_images.is_none())?;
                forbid("test_labels", spec.test_labels.is_none())?;
                load_csv_series(
                    Path::new(spec.path.as_ref().unwrap()),
                    spec.input_len.unwrap(),
                    spec.pred_len.unwrap(),
                )
            }
            other => Err(Error::Config(format!(
                "unknown dataset kind '{other}' (expected blobs, idx, or csv_series)"
            ))),
        }
    }

    /// Trainer settings with an optional seed override from the command
    /// line.
    pub fn train_config(&self, seed_override: Option<u64>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            delay: self.delay,
            update_every: self.stability_frequency,
            beta: self.sigma_cutoff_fraction,
            alpha: self.alpha,
            exclude_first_layer: self.full_rank_first_layer,
            exclude_last_layer: self.full_rank_last_layer,
            start_low_rank: self.start_low_rank,
            seed: seed_override.unwrap_or(self.seed),
            schedule: LrSchedule {
                base_lr: self.learning_rate,
                min_lr: self.min_learning_rate,
                warmup_lr: self.warmup_lr,
                warmup_epochs: self.warmup_epochs,
                total_epochs: self.epochs,
                k_decay: self.lr_k_decay,
            },
            adamw: AdamWConfig {
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            rank_change_mode: self.optimizer_state_mode,
            stability_norm: self.stability_norm,
            snapshot_lag: self.snapshot_lag,
            stability_every: self.stability_every,
            label_smoothing: self.label_smoothing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": { "widths": [8, 6, 3] },
        "dataset": { "kind": "blobs", "classes": 3, "dims": 8, "samples_per_class": 10 },
        "epochs": 2,
        "batch_size": 8
    }"#;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = RunConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.sigma_cutoff_fraction, 0.1);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.delay, None);
        assert_eq!(cfg.stability_frequency, None);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.warmup_epochs, 10);
        assert_eq!(cfg.snapshot_lag, 5);
        assert_eq!(cfg.optimizer_state_mode, RankChangeMode::Reset);
        assert_eq!(cfg.stability_norm, StabilityNorm::MinRank);
        let tc = cfg.train_config(None);
        assert_eq!(tc.beta, 0.1);
        assert_eq!(tc.schedule.total_epochs, 2);
        let data = cfg.build_dataset().unwrap();
        assert_eq!(data.feature_dim(), 8);
        let model = cfg.build_model(0).unwrap();
        assert_eq!(model.num_dense_layers(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"epochs\": 2", "\"epochs\": 2, \"betta\": 0.2");
        let err = RunConfigFile::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("betta"), "{err}");

        let bad_model = MINIMAL.replace(
            "\"widths\": [8, 6, 3]",
            "\"widths\": [8, 6, 3], \"depth\": 2",
        );
        assert!(RunConfigFile::parse(&bad_model).is_err());

        let bad_data = MINIMAL.replace("\"kind\": \"blobs\"", "\"kind\": \"blobs\", \"x\": 1");
        assert!(RunConfigFile::parse(&bad_data).is_err());
    }

    #[test]
    fn dataset_kind_checks_field_applicability() {
        let wrong_field = MINIMAL.replace(
            "\"samples_per_class\": 10",
            "\"samples_per_class\": 10, \"path\": \"x.csv\"",
        );
        let cfg = RunConfigFile::parse(&wrong_field).unwrap();
        let err = cfg.build_dataset().unwrap_err();
        assert!(err.to_string().contains("does not apply"), "{err}");

        let missing = MINIMAL.replace(", \"samples_per_class\": 10", "");
        let cfg = RunConfigFile::parse(&missing).unwrap();
        let err = cfg.build_dataset().unwrap_err();
        assert!(err.to_string().contains("requires"), "{err}");

        let unknown_kind = MINIMAL.replace("\"kind\": \"blobs\"", "\"kind\": \"mnist\"");
        let cfg = RunConfigFile::parse(&unknown_kind).unwrap();
        assert!(cfg.build_dataset().is_err());
    }

    #[test]
    fn seed_override_wins() {
        let cfg = RunConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.train_config(None).seed, 0);
        assert_eq!(cfg.train_config(Some(7)).seed, 7);
    }

    #[test]
    fn table_style_keys_parse() {
        let full = r#"{
            "model": { "widths": [8, 4], "activation": "gelu" },
            "dataset": { "kind": "blobs", "classes": 2, "dims": 8,
                         "samples_per_class": 10, "spread": 0.3, "data_seed": 4 },
            "epochs": 3,
            "batch_size": 4,
            "seed": 9,
            "delay": 5,
            "stability_frequency": 2,
            "sigma_cutoff_fraction": 0.2,
            "alpha": 0.5,
            "full_rank_first_layer": true,
            "full_rank_last_layer": true,
            "start_low_rank": false,
            "learning_rate": 0.01,
            "min_learning_rate": 0.0001,
            "warmup_lr": 0.0001,
            "warmup_epochs": 1,
            "lr_k_decay": 2.0,
            "weight_decay": 0.05,
            "label_smoothing": 0.1,
            "snapshot_lag": 2,
            "stability_every": 1,
            "optimizer_state_mode": "slice",
            "stability_norm": "row_dim",
            "out_dir": "runs/demo"
        }"#;
        let cfg = RunConfigFile::parse(full).unwrap();
        assert_eq!(cfg.optimizer_state_mode, RankChangeMode::Slice);
        assert_eq!(cfg.stability_norm, StabilityNorm::RowDim);
        let tc = cfg.train_config(None);
        assert!(tc.exclude_first_layer && tc.exclude_last_layer);
        assert_eq!(tc.update_every, Some(2));
        assert_eq!(tc.adamw.weight_decay, 0.05);
        assert_eq!(tc.schedule.k_decay, 2.0);
    }
}
