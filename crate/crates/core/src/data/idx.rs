//! IDX (MNIST-style) image and label files.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

/// Parses in-memory IDX image/label files. Pixels are scaled to `[0, 1]` and
/// the class count is one past the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8], images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let bad_img = |why: String| Error::format("idx", images_path, why);
    let bad_lbl = |why: String| Error::format("idx", labels_path, why);

    match be_u32(images, 0) {
        Some(IMAGES_MAGIC) => {}
        Some(m) => return Err(bad_img(format!("magic {m:#010x}, expected {IMAGES_MAGIC:#010x}"))),
        None => return Err(bad_img("file too short for a header".into())),
    }
    let (count, rows, cols) = match (be_u32(images, 4), be_u32(images, 8), be_u32(images, 12)) {
        (Some(n), Some(r), Some(c)) => (n as usize, r as usize, c as usize),
        _ => return Err(bad_img("truncated header".into())),
    };
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() != count * dim {
        return Err(bad_img(format!(
            "{} pixel bytes, header declares {count} x {rows} x {cols}",
            pixels.len()
        )));
    }

    match be_u32(labels, 0) {
        Some(LABELS_MAGIC) => {}
        Some(m) => return Err(bad_lbl(format!("magic {m:#010x}, expected {LABELS_MAGIC:#010x}"))),
        None => return Err(bad_lbl("file too short for a header".into())),
    }
    let label_count = be_u32(labels, 4).ok_or_else(|| bad_lbl("truncated header".into()))? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != label_count {
        return Err(bad_lbl(format!(
            "{} label bytes, header declares {label_count}",
            label_bytes.len()
        )));
    }
    if label_count != count {
        return Err(bad_lbl(format!("{label_count} labels for {count} images")));
    }
    if count == 0 {
        return Err(bad_img("no samples".into()));
    }

    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Dataset::new(Tensor2::from_vec(count, dim, data)?, labels, class_count)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, images_path, labels_path)
}
