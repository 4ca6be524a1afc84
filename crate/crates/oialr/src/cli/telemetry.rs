//! CSV emission for per-epoch telemetry and stability reports.
//!
//! Formatting is the shortest round-trip decimal for every float, so two
//! runs that agree bitwise in memory agree bytewise on disk. No
//! timestamps, no locale: the files diff clean across identical runs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::StabilityRecord;
use crate::trainer::TelemetryRow;

pub const TELEMETRY_HEADER: &str = "epoch,step,train_loss,train_metric,val_loss,val_metric,lr,\
trainable_params,total_params,compression_pct,trainable_pct,mean_stability,mean_similarity,\
rank_per_layer";

pub const STABILITY_HEADER: &str = "epoch,layer_id,stability,similarity";

pub fn format_row(row: &TelemetryRow) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let ranks: Vec<String> = row.rank_per_layer.iter().map(|r| r.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.epoch,
        row.step,
        row.train_loss,
        row.train_metric,
        row.val_loss,
        row.val_metric,
        row.lr,
        row.trainable_params,
        row.total_params,
        row.compression_pct,
        row.trainable_pct,
        opt(row.mean_stability),
        opt(row.mean_similarity),
        ranks.join(";"),
    )
}

pub fn write_telemetry(path: &Path, rows: &[TelemetryRow]) -> Result<()> {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format_row(row));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Stability rows keyed by the later epoch of each pair; the mean-over-
/// layers row uses `mean` in the layer column.
pub fn write_stability(path: &Path, records: &[StabilityRecord]) -> Result<()> {
    let mut out = String::from(STABILITY_HEADER);
    out.push('\n');
    for r in records {
        let layer = match r.layer_id {
            Some(id) => id.to_string(),
            None => "mean".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch_j, layer, r.stability, r.similarity
        ));
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}
