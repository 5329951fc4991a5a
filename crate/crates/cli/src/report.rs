//! The `report` subcommand: collects every run under a directory into
//! long-format CSV tables keyed by configuration hash, seed and run path.
//!
//! Round metrics and attack outcomes are copied from each `report.json`;
//! per-model FSS and the traceability rate are recomputed from the saved
//! client checkpoints and fingerprint records.

use std::path::{Path, PathBuf};

use fedtracker::fingerprint::{hd_trace, load_records, trace};
use fedtracker::nn::load_model;
use log::warn;
use serde_json::Value;
use walkdir::WalkDir;

use crate::commands::{client_file, ATTACK_HEADER, RECORDS_FILE, REPORT_FILE};
use crate::error::{CliError, Result};
use crate::output::{create_dir, read_json, write_csv};

pub const ROUNDS_TABLE: &str = "rounds.csv";
pub const FSS_TABLE: &str = "fss.csv";
pub const TRACEABILITY_TABLE: &str = "traceability.csv";
pub const ATTACKS_TABLE: &str = "attacks.csv";

const KEY_HEADER: [&str; 3] = ["config_hash", "seed", "run"];
const ROUND_FIELDS: [&str; 8] = [
    "round",
    "test_acc",
    "wm_acc",
    "min_fss",
    "mean_fss",
    "global_test_acc",
    "global_wm_acc",
    "aggregate_test_acc",
];
const FSS_FIELDS: [&str; 4] = ["model", "record", "fss", "traced_id"];
const TRACEABILITY_FIELDS: [&str; 6] = [
    "clients",
    "bits",
    "traceability_rate",
    "hd_agreement",
    "min_own_fss",
    "reported_traceability_rate",
];
/// `report.json` keys of the attack columns, in `ATTACK_HEADER` order.
const ATTACK_KEYS: [&str; 12] = [
    "attack",
    "adversary",
    "test_acc_before",
    "test_acc_after",
    "wm_acc_before",
    "wm_acc_after",
    "fss_before",
    "fss_after",
    "traced_id_before",
    "traced_id_after",
    "verified_after",
    "verdict",
];

/// What `report` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub runs: Vec<PathBuf>,
    pub tables: Vec<PathBuf>,
}

/// Directories under `root` (including `root`) holding a `report.json`,
/// sorted by path.
pub fn discover_runs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut runs = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            CliError::io(path, e.into())
        })?;
        if entry.file_type().is_file() && entry.file_name() == REPORT_FILE {
            if let Some(dir) = entry.path().parent() {
                runs.push(dir.to_path_buf());
            }
        }
    }
    runs.sort();
    Ok(runs)
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

fn bad_report(dir: &Path, what: &str) -> CliError {
    CliError::Usage(format!("{}: {what}", dir.join(REPORT_FILE).display()))
}

/// One run as read back from disk.
struct Run {
    key: [String; 3],
    dir: PathBuf,
    report: Value,
}

impl Run {
    fn load(root: &Path, dir: &Path) -> Result<Self> {
        let report = read_json(&dir.join(REPORT_FILE))?;
        let hash = report
            .get("config_hash")
            .and_then(Value::as_str)
            .ok_or_else(|| bad_report(dir, "missing config_hash"))?
            .to_string();
        let seed = cell(report.get("seed"));
        let rel = dir.strip_prefix(root).unwrap_or(dir);
        let name = if rel.as_os_str().is_empty() {
            ".".to_string()
        } else {
            rel.to_string_lossy().into_owned()
        };
        Ok(Run {
            key: [hash, seed, name],
            dir: dir.to_path_buf(),
            report,
        })
    }

    fn row(&self, rest: impl IntoIterator<Item = String>) -> Vec<String> {
        self.key.iter().cloned().chain(rest).collect()
    }

    fn array(&self, field: &str) -> &[Value] {
        self.report.get(field).and_then(Value::as_array).map_or(&[], Vec::as_slice)
    }

    fn clients(&self) -> Result<usize> {
        self.report
            .pointer("/config/fl/clients")
            .and_then(Value::as_u64)
            .map(|k| k as usize)
            .ok_or_else(|| bad_report(&self.dir, "missing config.fl.clients"))
    }
}

/// Recomputes per-model FSS rows and the traceability row of one run.
fn recompute(run: &Run, fss_rows: &mut Vec<Vec<String>>) -> Result<Vec<String>> {
    let clients = run.clients()?;
    let reported = cell(run.report.get("traceability_rate"));
    let records_path = run.dir.join(RECORDS_FILE);
    if !records_path.exists() {
        return Ok(run.row([
            clients.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            reported,
        ]));
    }
    let records = load_records(&records_path)?;
    let mut traced = 0;
    let mut agree = 0;
    let mut min_own = f64::INFINITY;
    for i in 0..clients {
        let w = load_model(&run.dir.join(client_file(i)))?.gamma_vector();
        let t = trace(&w, &records)?;
        let h = hd_trace(&w, &records)?;
        for (r, s) in records.iter().zip(&t.scores) {
            fss_rows.push(run.row([
                i.to_string(),
                r.client_id.to_string(),
                s.to_string(),
                t.client_id.to_string(),
            ]));
            if r.client_id == i {
                min_own = min_own.min(*s);
            }
        }
        traced += usize::from(t.client_id == i);
        agree += usize::from(!h.ambiguous && h.client_id == t.client_id);
    }
    let bits = records.first().map_or(0, |r| r.bits());
    Ok(run.row([
        clients.to_string(),
        bits.to_string(),
        (traced as f64 / clients as f64).to_string(),
        (agree as f64 / clients as f64).to_string(),
        min_own.to_string(),
        reported,
    ]))
}

/// Consolidates all runs under `root` into CSV tables in `out`
/// (default `root/tables`). With no runs it only warns and writes nothing.
pub fn report(root: &Path, out: Option<&Path>) -> Result<ReportSummary> {
    let dirs = discover_runs(root)?;
    if dirs.is_empty() {
        warn!("no runs (directories with {REPORT_FILE}) under {}", root.display());
        return Ok(ReportSummary {
            runs: Vec::new(),
            tables: Vec::new(),
        });
    }
    let runs = dirs.iter().map(|d| Run::load(root, d)).collect::<Result<Vec<_>>>()?;

    let mut round_rows = Vec::new();
    let mut fss_rows = Vec::new();
    let mut tr_rows = Vec::new();
    let mut attack_rows = Vec::new();
    for run in &runs {
        for r in run.array("rounds") {
            round_rows.push(run.row(ROUND_FIELDS.iter().map(|f| cell(r.get(*f)))));
        }
        tr_rows.push(recompute(run, &mut fss_rows)?);
        for a in run.array("attacks") {
            let adversary = a.get("adversary").and_then(Value::as_u64).map(|v| v as usize);
            attack_rows.push(run.row(ATTACK_KEYS.iter().map(|k| match (*k, adversary) {
                ("fss_before" | "fss_after", Some(adv)) => cell(a.get(*k).and_then(|v| v.get(adv))),
                _ => cell(a.get(*k)),
            })));
        }
    }

    let out = out.map_or_else(|| root.join("tables"), Path::to_path_buf);
    create_dir(&out)?;
    let header = |fields: &[&'static str]| -> Vec<&'static str> { KEY_HEADER.iter().chain(fields).copied().collect() };
    let tables = [
        (ROUNDS_TABLE, header(&ROUND_FIELDS), round_rows),
        (FSS_TABLE, header(&FSS_FIELDS), fss_rows),
        (TRACEABILITY_TABLE, header(&TRACEABILITY_FIELDS), tr_rows),
        (ATTACKS_TABLE, header(&ATTACK_HEADER), attack_rows),
    ];
    let mut written = Vec::new();
    for (name, header, rows) in &tables {
        let path = out.join(name);
        write_csv(&path, header, rows)?;
        written.push(path);
    }
    Ok(ReportSummary {
        runs: dirs,
        tables: written,
    })
}
