//! `.ftck` tensor files.
//!
//! Layout on disk:
//!
//! ```text
//! b"FTCK" | u32 LE manifest length | manifest JSON | f32 LE values
//! ```
//!
//! The manifest is a JSON array of `{"name", "shape"}` objects; values follow
//! in manifest order.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::BnMlp;
use super::params::{Layout, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FTCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let manifest: Vec<ManifestEntry> = tensors
        .iter()
        .map(|t| ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let manifest = serde_json::to_vec(&manifest)?;
    let total: usize = tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(8 + manifest.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let bad = |reason: String| Error::format("checkpoint", path, reason);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing FTCK header".into()));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < mlen {
        return Err(bad(format!("manifest truncated ({mlen} bytes declared)")));
    }
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(&body[..mlen]).map_err(|e| bad(format!("manifest: {e}")))?;
    let blob = &body[mlen..];
    let expected: usize = manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 4 {
        return Err(bad(format!(
            "blob holds {} bytes, manifest needs {}",
            blob.len(),
            expected * 4
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    Ok(manifest
        .into_iter()
        .map(|e| {
            let n = e.shape.iter().product();
            NamedTensor {
                name: e.name,
                shape: e.shape,
                data: values.by_ref().take(n).collect(),
            }
        })
        .collect())
}

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes, path)
}

pub fn params_to_tensors(params: &ParamVector) -> Vec<NamedTensor> {
    params
        .layout()
        .entries()
        .iter()
        .map(|e| NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: params.values()[e.offset..e.offset + e.len].to_vec(),
        })
        .collect()
}

pub fn tensors_to_params(tensors: Vec<NamedTensor>) -> Result<ParamVector> {
    let mut layout = Layout::new();
    let mut values = Vec::new();
    for t in tensors {
        layout.push(t.name, t.shape)?;
        values.extend(t.data);
    }
    ParamVector::new(Arc::new(layout), values)
}

pub fn save_model(path: &Path, model: &BnMlp) -> Result<()> {
    write_tensors(path, &params_to_tensors(&model.to_params()))
}

pub fn load_model(path: &Path) -> Result<BnMlp> {
    let params = tensors_to_params(read_tensors(path)?)
        .map_err(|e| Error::format("checkpoint", path, e.to_string()))?;
    BnMlp::from_params(&params).map_err(|e| Error::format("checkpoint", path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn model_survives_a_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = BnMlp::new(5, &[7, 3], 4, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ftck");
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_is_magic_then_manifest() {
        let t = NamedTensor::new("x", vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode_tensors(&[t]).unwrap();
        assert_eq!(&bytes[..4], b"FTCK");
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[8..8 + mlen]).unwrap();
        assert_eq!(manifest, serde_json::json!([{"name": "x", "shape": [2]}]));
        assert_eq!(&bytes[8 + mlen..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0]);
    }

    #[test]
    fn truncated_and_padded_blobs_rejected() {
        let t = NamedTensor::new("x", vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_tensors(&[t]).unwrap();
        let p = Path::new("mem");
        assert!(decode_tensors(&bytes[..bytes.len() - 1], p).is_err());
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(decode_tensors(&longer, p).is_err());
        assert!(decode_tensors(b"", p).is_err());
        assert!(decode_tensors(b"NOPE\0\0\0\0", p).is_err());
    }
}
