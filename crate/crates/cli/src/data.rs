//! Dataset ingestion: IDX image/label pairs, label+pixels CSV, and the
//! in-process synthetic generator.

use std::path::Path;

use gradlab_core::trainer::{synthetic_quadrants, Dataset};
use gradlab_core::{Rng, Tensor};

use crate::config::{DatasetSource, RunConfig};
use crate::error::{CliError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            msg: format!(
                "truncated file: expected at least {end} bytes, got {}",
                bytes.len()
            ),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` by 1/255;
/// the class count is `max label + 1` (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path).map_err(CliError::io(images_path))?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::Data {
            path: images_path.to_path_buf(),
            msg: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(CliError::Data {
            path: images_path.to_path_buf(),
            msg: format!(
                "truncated file: header promises {expected} bytes, got {}",
                img_bytes.len()
            ),
        });
    }

    let lbl_bytes = std::fs::read(labels_path).map_err(CliError::io(labels_path))?;
    let magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::Data {
            path: labels_path.to_path_buf(),
            msg: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_count != count {
        return Err(CliError::Data {
            path: labels_path.to_path_buf(),
            msg: format!("label count {lbl_count} does not match image count {count}"),
        });
    }
    let expected = 8 + lbl_count;
    if lbl_bytes.len() != expected {
        return Err(CliError::Data {
            path: labels_path.to_path_buf(),
            msg: format!(
                "truncated file: header promises {expected} bytes, got {}",
                lbl_bytes.len()
            ),
        });
    }

    let mut samples = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let pixels: Vec<f64> = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        let label = lbl_bytes[8 + i] as usize;
        max_label = max_label.max(label);
        samples.push((
            Tensor::new(vec![1, rows, cols], pixels).map_err(CliError::Core)?,
            label,
        ));
    }
    Dataset::new(samples, (max_label + 1).max(2)).map_err(CliError::Core)
}

/// Loads `label,p1,...,p_{side*side}` rows with 0-255 pixel values, scaled
/// the same way as [`load_idx`].
pub fn load_csv(path: &Path, side: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for (i, line) in text.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 1 + side * side {
            return Err(CliError::Data {
                path: path.to_path_buf(),
                msg: format!(
                    "row {row_no}: expected {} cells (label + {side}x{side} pixels), got {}",
                    1 + side * side,
                    cells.len()
                ),
            });
        }
        let label: usize = cells[0].trim().parse().map_err(|_| CliError::Data {
            path: path.to_path_buf(),
            msg: format!("row {row_no}: label `{}` is not an integer", cells[0]),
        })?;
        max_label = max_label.max(label);
        let mut pixels = Vec::with_capacity(side * side);
        for cell in &cells[1..] {
            let v: f64 = cell.trim().parse().map_err(|_| CliError::Data {
                path: path.to_path_buf(),
                msg: format!("row {row_no}: pixel `{cell}` is not numeric"),
            })?;
            pixels.push(v / 255.0);
        }
        samples.push((
            Tensor::new(vec![1, side, side], pixels).map_err(CliError::Core)?,
            label,
        ));
    }
    Dataset::new(samples, (max_label + 1).max(2)).map_err(CliError::Core)
}

/// Resolves the config's dataset source. The synthetic generator draws from
/// a generator seeded with the master seed directly (distinct from the five
/// derived streams).
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic { samples, side } => {
            let mut rng = Rng::from_seed(cfg.seed);
            synthetic_quadrants(*samples, *side, &mut rng).map_err(CliError::Core)
        }
        DatasetSource::Idx { images, labels } => load_idx(images, labels),
        DatasetSource::Csv { path, side } => load_csv(path, *side),
    }
}
