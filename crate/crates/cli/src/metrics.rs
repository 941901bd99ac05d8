//! Metrics CSV emitter: header `epoch,split,loss,accuracy,lr,elapsed_ms`,
//! floats rendered with 17 significant digits so parse-back is exact.

use std::path::Path;

use gradlab_core::trainer::{MetricsRecord, Split};

use crate::error::{CliError, Result};

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,lr,elapsed_ms";

pub fn metrics_to_string(history: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{}\n",
            r.epoch,
            r.split.as_str(),
            r.loss,
            r.accuracy,
            r.lr,
            r.elapsed_ms
        ));
    }
    out
}

pub fn write_metrics(history: &[MetricsRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_to_string(history)).map_err(CliError::io(path))
}

/// Parses a metrics CSV back into records (the round-trip counterpart of
/// [`write_metrics`]).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(CliError::Data {
                path: path.to_path_buf(),
                msg: format!("bad metrics header: {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(CliError::Data {
                path: path.to_path_buf(),
                msg: format!("row {row_no}: expected 6 cells, got {}", cells.len()),
            });
        }
        let bad = |what: &str| CliError::Data {
            path: path.to_path_buf(),
            msg: format!("row {row_no}: bad {what}"),
        };
        records.push(MetricsRecord {
            epoch: cells[0].parse().map_err(|_| bad("epoch"))?,
            split: Split::parse(cells[1]).ok_or_else(|| bad("split"))?,
            loss: cells[2].parse().map_err(|_| bad("loss"))?,
            accuracy: cells[3].parse().map_err(|_| bad("accuracy"))?,
            lr: cells[4].parse().map_err(|_| bad("lr"))?,
            elapsed_ms: cells[5].parse().map_err(|_| bad("elapsed_ms"))?,
        });
    }
    Ok(records)
}
