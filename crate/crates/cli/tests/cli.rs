//! End-to-end runs of the `fedtracker` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fedtracker::fingerprint::{load_records, FingerprintRecord};
use fedtracker::nn::{load_model, save_model, BnMlp};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn fedtracker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedtracker"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

/// One small protected run (3 clients, 5 rounds) shared by the read-only
/// tests.
fn protected_run() -> &'static Path {
    static RUN: OnceLock<TempDir> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "cfg.json", r#"{"fl":{"clients":3,"rounds":5}}"#);
        let out = dir.path().join("run");
        let o = fedtracker(&["train", "--config", arg(&cfg), "--out", arg(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dir
    })
    .path()
}

fn run_dir() -> PathBuf {
    protected_run().join("run")
}

/// FSS computed with a dense linear-algebra library instead of the crate's
/// response loop.
fn oracle_fss(record: &FingerprintRecord, w: &[f32]) -> f64 {
    let a = DMatrix::from_fn(record.key.rows(), record.key.cols(), |r, c| record.key.get(r, c) as f64);
    let w = DVector::from_iterator(w.len(), w.iter().map(|&v| v as f64));
    let b = a.transpose() * w;
    let delta = record.delta as f64;
    let total: f64 = b.iter().zip(&record.code).map(|(&b, &f)| (b * f as f64).min(delta)).sum();
    total / (record.code.len() as f64 * delta)
}

fn oracle_trace(records: &[FingerprintRecord], w: &[f32]) -> usize {
    let scores: Vec<f64> = records.iter().map(|r| oracle_fss(r, w)).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    records[scores.iter().position(|&s| s == best).unwrap()].client_id
}

#[test]
fn tiny_config_completes_quickly_with_one_row_per_round() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", r#"{"fl":{"clients":3,"rounds":2}}"#);
    let out = dir.path().join("run");
    let started = Instant::now();
    let o = fedtracker(&["train", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(started.elapsed() < Duration::from_secs(60));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,test_acc,wm_acc,min_fss,mean_fss");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rounds"].as_array().unwrap().len(), 3);
    assert_eq!(report["config"]["fl"]["clients"], 3);
    assert_eq!(report["clients"].as_array().unwrap().len(), 3);
    for f in ["global.ftck", "client_0.ftck", "client_2.ftck", "records.json", "keys.ftck", "trigger.ftck", "trigger.json", "config.json", "timing.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn config_echo_reruns_to_the_same_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tiny.json", r#"{"fl":{"clients":2,"rounds":1},"seed":4}"#);
    let first = dir.path().join("first");
    assert!(fedtracker(&["train", "--config", arg(&cfg), "--out", arg(&first)]).status.success());
    let echo = first.join("config.json");
    let second = dir.path().join("second");
    assert!(fedtracker(&["train", "--config", arg(&echo), "--out", arg(&second)]).status.success());
    let a = fs::read(first.join("report.json")).unwrap();
    let b = fs::read(second.join("report.json")).unwrap();
    let strip = |bytes: &[u8]| {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        v["config"]["output_dir"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn missing_config_exits_with_usage_code() {
    let o = fedtracker(&["train", "--config", "/nonexistent/fedtracker.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fedtracker.json"));
}

#[test]
fn unknown_config_key_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"fl":{"clients":3,"roundz":2}}"#);
    let o = fedtracker(&["train", "--config", arg(&cfg), "--out", arg(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = write_config(dir.path(), "tiny.json", r#"{"fl":{"clients":2,"rounds":1}}"#);
    let o = fedtracker(&["train", "--config", arg(&cfg), "--out", arg(&blocker.join("run"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_accepts_protected_and_rejects_random_models() {
    let run = run_dir();
    let trigger = run.join("trigger.ftck");
    for model in ["global.ftck", "client_0.ftck"] {
        let o = fedtracker(&["verify", "--model", arg(&run.join(model)), "--trigger", arg(&trigger)]);
        assert_eq!(o.status.code(), Some(0), "{model}: {}", String::from_utf8_lossy(&o.stdout));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["verdict"], true);
    }

    let dir = TempDir::new().unwrap();
    let random = dir.path().join("random.ftck");
    save_model(&random, &BnMlp::new(64, &[128, 128], 10, &mut ChaCha8Rng::seed_from_u64(99)).unwrap()).unwrap();
    let o = fedtracker(&["verify", "--model", arg(&random), "--trigger", arg(&trigger)]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], false);
    assert!(v["wm_acc"].as_f64().unwrap() < 0.5);

    let o = fedtracker(&["verify", "--model", arg(&random), "--trigger", arg(&trigger), "--epsilon-v", "0"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.ftck");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let o = fedtracker(&["verify", "--model", arg(&bad), "--trigger", arg(&run_dir().join("trigger.ftck"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_names_each_client_and_matches_recomputed_scores() {
    let run = run_dir();
    let records_path = run.join("records.json");
    let records = load_records(&records_path).unwrap();
    for k in 0..3 {
        let model = run.join(format!("client_{k}.ftck"));
        let o = fedtracker(&["trace", "--model", arg(&model), "--records", arg(&records_path)]);
        assert!(o.status.success());
        let t: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(t["client_id"], k);

        let w = load_model(&model).unwrap().gamma_vector();
        let mut got: Vec<f64> = t["fss"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let mut want: Vec<f64> = records.iter().map(|r| oracle_fss(r, &w)).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn trace_with_empty_records_fails() {
    let dir = TempDir::new().unwrap();
    let model = run_dir().join("client_0.ftck");
    let empty = dir.path().join("records.json");
    fs::write(&empty, "").unwrap();
    let o = fedtracker(&["trace", "--model", arg(&model), "--records", arg(&empty)]);
    assert_eq!(o.status.code(), Some(2));

    fs::copy(run_dir().join("keys.ftck"), dir.path().join("keys.ftck")).unwrap();
    fs::write(&empty, r#"{"keys_file":"keys.ftck","records":[]}"#).unwrap();
    let o = fedtracker(&["trace", "--model", arg(&model), "--records", arg(&empty)]);
    assert_eq!(o.status.code(), Some(2));
}

fn attack_args<'a>(spec: &'a str, out: &'a Path) -> Vec<String> {
    let run = run_dir();
    let cfg = protected_run().join("cfg.json");
    [
        "attack",
        "--model",
        arg(&run.join("client_1.ftck")),
        "--attack",
        spec,
        "--records",
        arg(&run.join("records.json")),
        "--trigger",
        arg(&run.join("trigger.ftck")),
        "--config",
        arg(&cfg),
        "--out",
        arg(out),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn unknown_attack_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    let args = attack_args("erase", dir.path());
    let o = fedtracker(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["finetune", "prune", "quantize", "overwrite"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn prune_attack_writes_a_complete_outcome() {
    let dir = TempDir::new().unwrap();
    let args = attack_args("prune:0.3:no_bn", dir.path());
    let o = fedtracker(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let outcome: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("outcome.json")).unwrap()).unwrap();
    for field in [
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
    ] {
        assert!(!outcome[field].is_null(), "missing {field}");
    }
    assert_eq!(outcome["attack"], "prune:0.3:no_bn");
    assert_eq!(outcome["adversary"], 1);
    assert_eq!(outcome["fss_after"].as_array().unwrap().len(), 3);
    let attacked = load_model(&dir.path().join("attacked.ftck")).unwrap();
    let zeros = attacked.to_params().values().iter().filter(|&&v| v == 0.0).count();
    assert!(zeros > 0);
}

#[test]
fn report_on_an_empty_directory_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let o = fedtracker(&["report", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no runs"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

fn read_table(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| header.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

#[test]
fn report_keys_both_runs_and_recomputes_traceability() {
    let dir = TempDir::new().unwrap();
    let runs = dir.path().join("runs");
    let cfg = write_config(dir.path(), "tiny.json", r#"{"fl":{"clients":3,"rounds":2}}"#);
    for (name, seed) in [("s0", "0"), ("s1", "1")] {
        let o = fedtracker(&["train", "--config", arg(&cfg), "--seed", seed, "--out", arg(&runs.join(name))]);
        assert!(o.status.success());
    }
    let o = fedtracker(&["report", arg(&runs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tables = runs.join("tables");

    let rounds = read_table(&tables.join("rounds.csv"));
    assert_eq!(rounds.len(), 6);
    let hashes: std::collections::BTreeSet<&str> = rounds.iter().map(|r| r["config_hash"].as_str()).collect();
    assert_eq!(hashes.len(), 2);

    let tr = read_table(&tables.join("traceability.csv"));
    assert_eq!(tr.len(), 2);
    for row in &tr {
        let run = runs.join(&row["run"]);
        let records = load_records(&run.join("records.json")).unwrap();
        let traced = (0..3)
            .filter(|&i| {
                let w = load_model(&run.join(format!("client_{i}.ftck"))).unwrap().gamma_vector();
                oracle_trace(&records, &w) == i
            })
            .count();
        let want = traced as f64 / 3.0;
        assert_eq!(row["traceability_rate"].parse::<f64>().unwrap(), want);
    }
    assert_eq!(read_table(&tables.join("fss.csv")).len(), 2 * 3 * 3);
    assert!(tables.join("attacks.csv").exists());
}
