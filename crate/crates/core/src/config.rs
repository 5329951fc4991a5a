//! Experiment configuration: one JSON document describing a complete run.
//! Every section has defaults, and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackSpec;
use crate::data::{load_idx, synth_blobs_scaled, Dataset};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintConfig;
use crate::sim::{FlConfig, ProtectionConfig};
use crate::watermark::WatermarkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic blobs: number of classes.
    pub classes: usize,
    /// Synthetic blobs: feature dimension.
    pub dim: usize,
    /// Synthetic blobs: samples per class.
    pub per_class: usize,
    /// Synthetic blobs: standard deviation around each class mean.
    pub spread: f32,
    /// Synthetic blobs: class means are drawn from `N(0, mean_scale²·I)`.
    pub mean_scale: f32,
    /// IDX image file (when `source` is `idx`).
    pub images: Option<PathBuf>,
    /// IDX label file (when `source` is `idx`).
    pub labels: Option<PathBuf>,
    /// Dirichlet concentration for label-skewed shards; i.i.d. when absent.
    pub dirichlet_xi: Option<f64>,
    /// Share of the pool held out as the server's test set.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            classes: 10,
            dim: 64,
            per_class: 200,
            spread: 0.5,
            mean_scale: 1.0,
            images: None,
            labels: None,
            dirichlet_xi: None,
            test_fraction: 0.1,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synth => {
                if self.classes < 2 || self.dim == 0 || self.per_class == 0 {
                    return Err(Error::InvalidConfig(
                        "data: synthetic source needs classes >= 2, dim >= 1, per_class >= 1".into(),
                    ));
                }
                if !(self.spread >= 0.0 && self.spread.is_finite()) {
                    return Err(Error::InvalidConfig("data.spread must be >= 0".into()));
                }
                if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
                    return Err(Error::InvalidConfig("data.mean_scale must be >= 0".into()));
                }
            }
            DataSource::Idx => {
                if self.images.is_none() || self.labels.is_none() {
                    return Err(Error::InvalidConfig("data: idx source needs images and labels paths".into()));
                }
            }
        }
        if let Some(xi) = self.dirichlet_xi {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(Error::InvalidConfig("data.dirichlet_xi must be > 0".into()));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("data.test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// The full sample pool, before the test split.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self.source {
            DataSource::Synth => synth_blobs_scaled(
                seed,
                self.classes,
                self.dim,
                self.per_class,
                self.spread,
                self.mean_scale,
            ),
            DataSource::Idx => {
                let images = self.images.as_deref().expect("validated");
                let labels = self.labels.as_deref().expect("validated");
                load_idx(images, labels)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fl: FlConfig,
    pub watermark: WatermarkConfig,
    pub fingerprint: FingerprintConfig,
    pub data: DataConfig,
    pub protection: ProtectionConfig,
    /// Attack sweep run against the final client models.
    pub attacks: Vec<AttackSpec>,
    /// Clients playing the adversary in the attack sweep.
    pub adversaries: Vec<usize>,
    /// Case 2 utility-drop threshold `τ`.
    pub utility_drop: f32,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fl: FlConfig::default(),
            watermark: WatermarkConfig::default(),
            fingerprint: FingerprintConfig::default(),
            data: DataConfig::default(),
            protection: ProtectionConfig::default(),
            attacks: Vec::new(),
            adversaries: vec![0],
            utility_drop: crate::attacks::DEFAULT_UTILITY_DROP,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.fl.validate()?;
        self.watermark.validate()?;
        self.fingerprint.validate()?;
        self.data.validate()?;
        if let Some(&a) = self.adversaries.iter().find(|&&a| a >= self.fl.clients) {
            return Err(Error::InvalidConfig(format!(
                "adversary {a} is not one of the {} clients",
                self.fl.clients
            )));
        }
        if !(self.utility_drop >= 0.0 && self.utility_drop <= 1.0) {
            return Err(Error::InvalidConfig("utility_drop must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
