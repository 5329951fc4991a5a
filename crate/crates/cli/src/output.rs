//! File helpers shared by the subcommands: directories, JSON and CSV writers,
//! and the configuration hash that keys runs in the consolidated tables.

use std::fs;
use std::path::Path;

use fedtracker::sim::RoundMetrics;
use fedtracker::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const METRICS_HEADER: [&str; 5] = ["round", "test_acc", "wm_acc", "min_fss", "mean_fss"];

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Writes a CSV file from a header and string rows.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let io = |e: csv::Error| {
        let source = match e.into_kind() {
            csv::ErrorKind::Io(e) => e,
            other => std::io::Error::other(format!("{other:?}")),
        };
        CliError::io(path, source)
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `metrics.csv`: one row per training round, round 0 excluded.
pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .filter(|m| m.round > 0)
        .map(|m| {
            vec![
                m.round.to_string(),
                m.test_acc.to_string(),
                m.wm_acc.to_string(),
                m.min_fss.to_string(),
                m.mean_fss.to_string(),
            ]
        })
        .collect();
    write_csv(path, &METRICS_HEADER, &rows)
}

/// First 16 hex digits of the SHA-256 of the compact configuration JSON,
/// with the output directory blanked so relocating a run keeps its hash.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.output_dir = Default::default();
    let json = serde_json::to_string(&canonical)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}
