//! Trigger sets: class-specific uniform noise patterns with small Gaussian
//! perturbations, and their on-disk form.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_tensors, write_tensors, NamedTensor, Tensor2};

/// Labeled out-of-distribution samples whose classification proves ownership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSet {
    pub samples: Tensor2,
    pub labels: Vec<usize>,
    pub per_class_count: usize,
}

impl TriggerSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One base pattern per class with entries uniform in `±amplitude`, then
/// `per_class` copies of each with `N(0, noise_sigma²)` noise added. Samples
/// are ordered class by class.
pub fn gen_trigger_set(
    classes: usize,
    dim: usize,
    per_class: usize,
    amplitude: f32,
    noise_sigma: f32,
    seed: u64,
) -> Result<TriggerSet> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "trigger set needs classes >= 2, dim >= 1, per_class >= 1 (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) || !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad trigger amplitude {amplitude} or noise sigma {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-amplitude..=amplitude)).collect())
        .collect();
    let noise = Normal::new(0.0f32, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, pattern) in patterns.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(pattern.iter().map(|&p| p + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    Ok(TriggerSet {
        samples: Tensor2::from_vec(classes * per_class, dim, data)?,
        labels,
        per_class_count: per_class,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerLabels {
    per_class_count: usize,
    labels: Vec<usize>,
}

const SAMPLES: &str = "trigger.samples";

/// Path of the JSON label file that accompanies a trigger `.ftck` blob.
pub fn trigger_labels_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the samples to `path` (`.ftck`) and the labels next to it as JSON.
pub fn save_trigger(path: &Path, trigger: &TriggerSet) -> Result<()> {
    let (rows, cols) = trigger.samples.shape();
    write_tensors(
        path,
        &[NamedTensor::new(SAMPLES, vec![rows, cols], trigger.samples.data().to_vec())?],
    )?;
    let labels_path = trigger_labels_path(path);
    let json = serde_json::to_string(&TriggerLabels {
        per_class_count: trigger.per_class_count,
        labels: trigger.labels.clone(),
    })?;
    fs::write(&labels_path, json).map_err(|e| Error::io(labels_path, e))
}

pub fn load_trigger(path: &Path) -> Result<TriggerSet> {
    let tensors = read_tensors(path)?;
    let bad = |reason: String| Error::format("trigger set", path, reason);
    let t = tensors
        .into_iter()
        .find(|t| t.name == SAMPLES)
        .ok_or_else(|| bad(format!("no {SAMPLES} tensor")))?;
    let [rows, cols] = t.shape[..] else {
        return Err(bad("samples are not a matrix".into()));
    };
    let labels_path = trigger_labels_path(path);
    let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let labels: TriggerLabels =
        serde_json::from_str(&text).map_err(|e| Error::format("trigger labels", &labels_path, e.to_string()))?;
    if labels.labels.len() != rows {
        return Err(bad(format!("{} labels for {rows} samples", labels.labels.len())));
    }
    Ok(TriggerSet {
        samples: Tensor2::from_vec(rows, cols, t.data)?,
        labels: labels.labels,
        per_class_count: labels.per_class_count,
    })
}
