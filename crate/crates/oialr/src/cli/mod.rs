//! Experiment harness: configured train/compare runs, checkpoint
//! inspection, and post-hoc stability analysis over saved runs.
//!
//! Commands return `Result` and leave process-exit policy to the binary:
//! bad input maps to exit code 1, runtime failures to 2.

pub mod checkpoint;
pub mod config;
pub mod telemetry;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{compare_snapshots, entry_from_factors, entry_from_full, BasisSnapshot, StabilityRecord};
use crate::nn::SequentialModel;
use crate::optim::AdamW;
use crate::trainer::{train, train_baseline, TelemetryRow};

use checkpoint::{Checkpoint, LayerWeight, ROLE_BIAS, ROLE_SIGMA, ROLE_U, ROLE_V, ROLE_WEIGHT};
use config::RunConfigFile;

/// Write to stdout, treating a closed pipe as an ordinary end of output
/// so `inspect ... | head` exits cleanly.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::Internal(format!("cannot write to stdout: {e}"))),
    }
}

/// Run a configured training job and write `telemetry.csv`, periodic
/// `snap_{epoch}.ckpt` files, and `final.ckpt` into the output directory.
pub fn cmd_train(
    config_path: &Path,
    baseline: bool,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<()> {
    let cfg = RunConfigFile::load(config_path)?;
    let data = cfg.build_dataset()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let model = cfg.build_model(seed)?;
    let tc = cfg.train_config(seed_override);

    let out_dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config("no output directory: pass --out or set out_dir".into())
        })?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    // Snapshot checkpoints follow the snapshot cadence so the analyze
    // command sees exactly the epochs the in-training metrics saw.
    let every = tc.stability_every;
    let snap_dir = out_dir.clone();
    let mut observer =
        |epoch: usize, model: &SequentialModel, _: &AdamW, _: &TelemetryRow| -> Result<()> {
            if epoch % every == 0 {
                let path = snap_dir.join(format!("snap_{epoch}.ckpt"));
                Checkpoint::from_model(model, None).save(&path)?;
            }
            Ok(())
        };

    let outcome = if baseline {
        train_baseline(model, &tc, &data, &mut observer)?
    } else {
        train(model, &tc, &data, &mut observer)?
    };

    telemetry::write_telemetry(&out_dir.join("telemetry.csv"), &outcome.telemetry)?;
    Checkpoint::from_model(&outcome.model, Some(&outcome.optimizer))
        .save(&out_dir.join("final.ckpt"))?;

    let last = outcome
        .telemetry
        .last()
        .ok_or_else(|| Error::Internal("run produced no telemetry".into()))?;
    emit(&format!(
        "{}: val_loss={:.6} val_metric={:.6} compression={:.2}% trainable={:.2}%\n",
        if baseline { "baseline" } else { "oialr" },
        last.val_loss,
        last.val_metric,
        last.compression_pct,
        last.trainable_pct,
    ))
}

/// Recompute stability and similarity from a run's snapshot checkpoints
/// and write `stability.csv` next to them. Pairs epochs `e - lag` and `e`
/// wherever both snapshots exist.
pub fn cmd_analyze(run_dir: &Path, lag: usize) -> Result<()> {
    if lag == 0 {
        return Err(Error::Config("lag must be >= 1".into()));
    }
    let epochs = snapshot_epochs(run_dir)?;
    if epochs.len() < lag + 1 {
        return Err(Error::InsufficientHistory {
            found: epochs.len(),
            needed: lag + 1,
        });
    }

    let mut snapshots = Vec::with_capacity(epochs.len());
    for &epoch in &epochs {
        let ckpt = Checkpoint::load(&run_dir.join(format!("snap_{epoch}.ckpt")))?;
        snapshots.push(snapshot_from_checkpoint(&ckpt, epoch)?);
    }

    let mut records: Vec<StabilityRecord> = Vec::new();
    let mut pairs = 0usize;
    for snap in &snapshots {
        let Some(prev) = snapshots
            .iter()
            .find(|s| s.epoch + lag == snap.epoch)
        else {
            continue;
        };
        records.extend(compare_snapshots(
            prev,
            snap,
            crate::metrics::StabilityNorm::MinRank,
        )?);
        pairs += 1;
    }

    let out = run_dir.join("stability.csv");
    telemetry::write_stability(&out, &records)?;
    emit(&format!(
        "wrote {} ({} epoch pairs at lag {lag}, {} rows)\n",
        out.display(),
        pairs,
        records.len()
    ))
}

/// Print a checkpoint's tensor inventory and parameter accounting.
pub fn cmd_inspect(path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let mut report = String::new();
    let mut trainable = 0usize;
    let mut total = 0usize;
    let mut frozen = 0usize;
    for t in &ckpt.tensors {
        let shape = t
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let rank = sigma_rank(t)
            .map(|r| format!("  rank={r}"))
            .unwrap_or_default();
        report.push_str(&format!(
            "{:<24} {:<8} {}{}\n",
            t.name,
            checkpoint::role_name(t.role),
            shape,
            rank
        ));
        match t.role {
            ROLE_WEIGHT | ROLE_SIGMA | ROLE_BIAS => {
                trainable += t.elems();
                total += t.elems();
            }
            ROLE_U | ROLE_V => {
                frozen += 1;
                total += t.elems();
            }
            _ => {}
        }
    }

    // Full-rank equivalent: dense weights of the same shapes plus biases.
    let mut dense_equiv = 0usize;
    for (_, w) in ckpt.layer_weights()? {
        let (m, n) = match w {
            LayerWeight::Full(w) => (w.rows(), w.cols()),
            LayerWeight::Factored(w) => w.full_shape(),
        };
        dense_equiv += m * n;
    }
    dense_equiv += ckpt
        .tensors
        .iter()
        .filter(|t| t.role == ROLE_BIAS)
        .map(|t| t.elems())
        .sum::<usize>();

    report.push_str(&format!("frozen tensors: {frozen}\n"));
    report.push_str(&format!("trainable params: {trainable}\n"));
    report.push_str(&format!("total params: {total}\n"));
    if dense_equiv > 0 {
        report.push_str(&format!(
            "vs full-rank: total {:.2}%, trainable {:.2}%\n",
            100.0 * total as f64 / dense_equiv as f64,
            100.0 * trainable as f64 / dense_equiv as f64
        ));
    }
    emit(&report)
}

/// Diagonal sigma tensors report how many singular values are live.
fn sigma_rank(t: &checkpoint::TensorRecord) -> Option<usize> {
    if t.role != ROLE_SIGMA || t.dims.len() != 2 || t.dims[0] != t.dims[1] {
        return None;
    }
    let n = t.dims[0] as usize;
    for r in 0..n {
        for c in 0..n {
            if r != c && t.data[r * n + c] != 0.0 {
                return None;
            }
        }
    }
    Some((0..n).filter(|&i| t.data[i * n + i].abs() >= 1e-10).count())
}

/// Epoch numbers of `snap_{N}.ckpt` files in ascending order.
fn snapshot_epochs(run_dir: &Path) -> Result<Vec<usize>> {
    let entries = fs::read_dir(run_dir).map_err(|e| {
        Error::Config(format!("cannot read run directory {}: {e}", run_dir.display()))
    })?;
    let mut epochs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: run_dir.display().to_string(),
            source: e,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(num) = name
            .strip_prefix("snap_")
            .and_then(|s| s.strip_suffix(".ckpt"))
        {
            if let Ok(epoch) = num.parse::<usize>() {
                epochs.push(epoch);
            }
        }
    }
    epochs.sort_unstable();
    Ok(epochs)
}

/// Rebuild the same snapshot the trainer took at this epoch, from saved
/// weights instead of the live model.
fn snapshot_from_checkpoint(ckpt: &Checkpoint, epoch: usize) -> Result<BasisSnapshot> {
    let mut entries = Vec::new();
    for (id, weight) in ckpt.layer_weights()? {
        entries.push(match weight {
            LayerWeight::Full(w) => entry_from_full(id, &w)?,
            LayerWeight::Factored(w) => entry_from_factors(id, &w)?,
        });
    }
    if entries.is_empty() {
        return Err(Error::Checkpoint(
            "checkpoint contains no layer weights".into(),
        ));
    }
    Ok(BasisSnapshot { epoch, entries })
}

/// Honor `OIALR_THREADS` before any parallel work starts: positive values
/// cap the worker count, 0 or unset picks the machine default.
pub fn init_thread_pool_from_env() -> Result<()> {
    let Ok(raw) = std::env::var("OIALR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::Config(format!(
            "OIALR_THREADS must be a non-negative integer, got '{raw}'"
        ))
    })?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Internal(format!("thread pool already initialized: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, epochs: usize, extra: &str) -> PathBuf {
        let path = dir.join("run.json");
        let text = format!(
            r#"{{
                "model": {{ "widths": [6, 5, 4, 3] }},
                "dataset": {{ "kind": "blobs", "classes": 3, "dims": 6,
                             "samples_per_class": 10, "spread": 0.3, "data_seed": 2 }},
                "epochs": {epochs},
                "batch_size": 8,
                "warmup_epochs": 1{extra}
            }}"#
        );
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn train_writes_the_documented_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), 2, "");
        let out = dir.path().join("out");
        cmd_train(&cfg, false, Some(&out), None).unwrap();

        let telemetry = fs::read_to_string(out.join("telemetry.csv")).unwrap();
        let lines: Vec<&str> = telemetry.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], telemetry::TELEMETRY_HEADER);
        assert!(out.join("final.ckpt").is_file());
        assert!(out.join("snap_0.ckpt").is_file());
        assert!(out.join("snap_1.ckpt").is_file());
    }

    #[test]
    fn missing_config_names_the_path() {
        let err = cmd_train(Path::new("/nonexistent/cfg.json"), false, None, None).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("/nonexistent/cfg.json"), "{err}");
    }

    #[test]
    fn same_seed_runs_write_identical_telemetry() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), 3, "");
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_train(&cfg, false, Some(&out_a), None).unwrap();
        cmd_train(&cfg, false, Some(&out_b), None).unwrap();
        assert_eq!(
            fs::read(out_a.join("telemetry.csv")).unwrap(),
            fs::read(out_b.join("telemetry.csv")).unwrap()
        );
        assert_eq!(
            fs::read(out_a.join("final.ckpt")).unwrap(),
            fs::read(out_b.join("final.ckpt")).unwrap()
        );

        let out_c = dir.path().join("c");
        cmd_train(&cfg, false, Some(&out_c), Some(5)).unwrap();
        assert_ne!(
            fs::read(out_a.join("telemetry.csv")).unwrap(),
            fs::read(out_c.join("telemetry.csv")).unwrap()
        );
    }

    #[test]
    fn analyze_needs_enough_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), 2, "");
        let out = dir.path().join("out");
        cmd_train(&cfg, false, Some(&out), None).unwrap();
        // Two snapshots cannot support lag 5.
        let err = cmd_analyze(&out, 5).unwrap_err();
        match err {
            Error::InsufficientHistory { found, needed } => {
                assert_eq!((found, needed), (2, 6));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn analyze_writes_per_layer_and_mean_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), 5, ", \"delay\": 4");
        let out = dir.path().join("out");
        cmd_train(&cfg, false, Some(&out), None).unwrap();
        cmd_analyze(&out, 2).unwrap();

        let text = fs::read_to_string(out.join("stability.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], telemetry::STABILITY_HEADER);
        // Epochs 0..4 with lag 2 pair up as (0,2), (1,3), (2,4): three
        // pairs, each with 3 layer rows and a mean row.
        assert_eq!(lines.len(), 1 + 3 * 4);
        assert!(lines.iter().filter(|l| l.contains(",mean,")).count() == 3);
        for line in &lines[1..] {
            let parts: Vec<&str> = line.split(',').collect();
            assert_eq!(parts.len(), 4);
            let s: f64 = parts[2].parse().unwrap();
            assert!((-1.0..=1.0 + 1e-9).contains(&s));
        }
    }

    #[test]
    fn analyze_on_identical_snapshots_reports_unit_stability() {
        let dir = tempfile::tempdir().unwrap();
        let model = SequentialModel::mlp(&[5, 4, 3], crate::nn::Activation::Relu, 8).unwrap();
        // A frozen model: the same weights at every epoch.
        for epoch in 0..3 {
            Checkpoint::from_model(&model, None)
                .save(&dir.path().join(format!("snap_{epoch}.ckpt")))
                .unwrap();
        }
        cmd_analyze(dir.path(), 1).unwrap();
        let text = fs::read_to_string(dir.path().join("stability.csv")).unwrap();
        for line in text.lines().skip(1) {
            let s: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!((s - 1.0).abs() < 1e-12, "{line}");
        }
    }

    #[test]
    fn inspect_reads_fresh_and_rejects_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), 2, ", \"delay\": 3");
        let out = dir.path().join("out");
        cmd_train(&cfg, false, Some(&out), None).unwrap();
        let final_ckpt = out.join("final.ckpt");
        cmd_inspect(&final_ckpt).unwrap();

        let mut bytes = fs::read(&final_ckpt).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, bytes).unwrap();
        let err = cmd_inspect(&bad).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("corrupt checkpoint"), "{err}");
    }

    #[test]
    fn sigma_rank_counts_live_diagonal() {
        let t = checkpoint::TensorRecord {
            name: "layer0.sigma".into(),
            role: ROLE_SIGMA,
            dims: vec![3, 3],
            data: vec![2.0, 0.0, 0.0, 0.0, 1e-12, 0.0, 0.0, 0.0, 0.5],
        };
        assert_eq!(sigma_rank(&t), Some(2));

        let mut dense = t.clone();
        dense.data[1] = 0.3;
        assert_eq!(sigma_rank(&dense), None);
    }
}
