//! Fingerprint records on disk: a JSON index with codes as `+`/`-` strings
//! and margins, plus the keys as a `.ftck` blob next to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codes::{code_from_str, code_to_string};
use super::score::FingerprintRecord;
use crate::error::{Error, Result};
use crate::nn::{read_tensors, write_tensors, NamedTensor, Tensor2};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIndex {
    /// Key file, relative to the index file's directory.
    keys_file: String,
    records: Vec<RecordEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordEntry {
    client_id: usize,
    code: String,
    delta: f32,
    key: String,
}

fn key_name(client_id: usize) -> String {
    format!("key.{client_id}")
}

/// Writes `records_path` (JSON) and `keys_file` in the same directory.
pub fn save_records(records_path: &Path, keys_file: &str, records: &[FingerprintRecord]) -> Result<()> {
    let index = RecordIndex {
        keys_file: keys_file.to_string(),
        records: records
            .iter()
            .map(|r| RecordEntry {
                client_id: r.client_id,
                code: code_to_string(&r.code),
                delta: r.delta,
                key: key_name(r.client_id),
            })
            .collect(),
    };
    let tensors = records
        .iter()
        .map(|r| {
            NamedTensor::new(
                key_name(r.client_id),
                vec![r.key.rows(), r.key.cols()],
                r.key.data().to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_tensors(&sibling(records_path, keys_file), &tensors)?;
    let json = serde_json::to_string_pretty(&index)?;
    fs::write(records_path, json).map_err(|e| Error::io(records_path, e))
}

pub fn load_records(records_path: &Path) -> Result<Vec<FingerprintRecord>> {
    let text = fs::read_to_string(records_path).map_err(|e| Error::io(records_path, e))?;
    let index: RecordIndex = serde_json::from_str(&text)
        .map_err(|e| Error::format("records", records_path, e.to_string()))?;
    let keys_path = sibling(records_path, &index.keys_file);
    let tensors = read_tensors(&keys_path)?;
    let bad = |reason: String| Error::format("records", records_path, reason);
    index
        .records
        .into_iter()
        .map(|e| {
            let t = tensors
                .iter()
                .find(|t| t.name == e.key)
                .ok_or_else(|| bad(format!("key {} missing from {}", e.key, keys_path.display())))?;
            let code = code_from_str(&e.code).map_err(|err| bad(err.to_string()))?;
            let [rows, cols] = t.shape[..] else {
                return Err(bad(format!("key {} is not a matrix", e.key)));
            };
            if cols != code.len() {
                return Err(bad(format!("key {} has {cols} columns for a {}-bit code", e.key, code.len())));
            }
            if !(e.delta > 0.0) {
                return Err(bad(format!("client {} has non-positive margin", e.client_id)));
            }
            Ok(FingerprintRecord {
                client_id: e.client_id,
                code,
                key: Tensor2::from_vec(rows, cols, t.data.clone())?,
                delta: e.delta,
            })
        })
        .collect()
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}
