//! The `train`, `verify`, `trace` and `attack` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fedtracker::attacks::{apply_attack, attack_sweep, evaluate_attack, AttackContext, AttackOutcome, AttackSpec, Judge};
use fedtracker::fingerprint::{hd_trace, load_records, save_records, trace};
use fedtracker::nn::{load_model, save_model};
use fedtracker::seed::{derive_rng, Stream};
use fedtracker::sim::{build_data, run_experiment, RoundMetrics};
use fedtracker::watermark::{load_trigger, save_trigger, trigger_accuracy, WatermarkConfig};
use fedtracker::{ExperimentConfig, ExperimentReport};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{config_hash, create_dir, write_csv, write_json, write_metrics_csv};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.json";
pub const KEYS_FILE: &str = "keys.ftck";
pub const TRIGGER_FILE: &str = "trigger.ftck";
pub const GLOBAL_FILE: &str = "global.ftck";
pub const ATTACKS_FILE: &str = "attacks.csv";

pub fn client_file(client: usize) -> String {
    format!("client_{client}.ftck")
}

pub const ATTACK_HEADER: [&str; 12] = [
    "attack",
    "adversary",
    "test_acc_before",
    "test_acc_after",
    "wm_acc_before",
    "wm_acc_after",
    "adversary_fss_before",
    "adversary_fss_after",
    "traced_id_before",
    "traced_id_after",
    "verified_after",
    "verdict",
];

pub fn attack_row(o: &AttackOutcome) -> Vec<String> {
    let (fss_before, fss_after) = o.adversary_fss();
    vec![
        o.attack.clone(),
        o.adversary.to_string(),
        o.test_acc_before.to_string(),
        o.test_acc_after.to_string(),
        o.wm_acc_before.to_string(),
        o.wm_acc_after.to_string(),
        fss_before.to_string(),
        fss_after.to_string(),
        o.traced_id_before.to_string(),
        o.traced_id_after.to_string(),
        o.verified_after.to_string(),
        serde_json::to_value(o.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    ]
}

/// Final state of one client model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client_id: usize,
    pub test_acc: f32,
    pub wm_acc: f32,
    /// FSS under the client's own record; absent without fingerprints.
    pub fss: Option<f64>,
    pub traced_id: Option<usize>,
}

/// Contents of `report.json`. Everything in it is a function of the
/// configuration, so two runs of the same configuration write identical
/// bytes; wall-clock time goes to `timing.json` instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Round 0 (initialization) followed by one row per round.
    pub rounds: Vec<RoundMetrics>,
    pub traceability_rate: Option<f64>,
    pub hd_agreement: Option<f64>,
    pub clients: Vec<ClientSummary>,
    pub attacks: Vec<AttackOutcome>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    wall_clock_secs: f64,
    attack_secs: f64,
}

/// Loads `path`, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Applies command-line overrides and re-validates.
pub fn effective_config(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn client_summaries(report: &ExperimentReport) -> Result<Vec<ClientSummary>> {
    let sim = &report.simulation;
    sim.state
        .clients
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (fss, traced_id) = if sim.records.is_empty() {
                (None, None)
            } else {
                let t = trace(&m.gamma_vector(), &sim.records)?;
                (Some(t.scores[i]), Some(t.client_id))
            };
            Ok(ClientSummary {
                client_id: i,
                test_acc: m.accuracy(&sim.test.features, &sim.test.labels)?,
                wm_acc: trigger_accuracy(m, &sim.trigger)?,
                fss,
                traced_id,
            })
        })
        .collect()
}

/// Runs an experiment and writes its artifacts to `cfg.output_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<RunReport> {
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    let hash = config_hash(cfg)?;
    info!("run {hash} (seed {}) -> {}", cfg.seed, out.display());

    let started = Instant::now();
    let report = run_experiment(cfg)?;
    let trained = started.elapsed().as_secs_f64();
    let sim = &report.simulation;

    let attacks = if cfg.attacks.is_empty() {
        Vec::new()
    } else {
        attack_sweep(sim, &cfg.attacks, &cfg.adversaries, cfg.utility_drop)?
    };
    let attack_secs = started.elapsed().as_secs_f64() - trained;

    save_model(&out.join(GLOBAL_FILE), &sim.state.global)?;
    for (i, m) in sim.state.clients.iter().enumerate() {
        save_model(&out.join(client_file(i)), m)?;
    }
    save_trigger(&out.join(TRIGGER_FILE), &sim.trigger)?;
    if !sim.records.is_empty() {
        save_records(&out.join(RECORDS_FILE), KEYS_FILE, &sim.records)?;
    }

    let run = RunReport {
        config_hash: hash,
        seed: cfg.seed,
        config: cfg.clone(),
        rounds: report.metrics.clone(),
        traceability_rate: report.traceability_rate,
        hd_agreement: report.hd_agreement,
        clients: client_summaries(&report)?,
        attacks,
    };
    write_metrics_csv(&out.join(METRICS_FILE), &run.rounds)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    write_json(&out.join(REPORT_FILE), &run)?;
    if !run.attacks.is_empty() {
        let rows: Vec<Vec<String>> = run.attacks.iter().map(attack_row).collect();
        write_csv(&out.join(ATTACKS_FILE), &ATTACK_HEADER, &rows)?;
    }
    write_json(
        &out.join(TIMING_FILE),
        &Timing {
            wall_clock_secs: started.elapsed().as_secs_f64(),
            attack_secs,
        },
    )?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub wm_acc: f32,
    pub epsilon_v: f32,
    pub verdict: bool,
}

pub fn verify(model: &Path, trigger: &Path, epsilon_v: Option<f32>) -> Result<VerifyResult> {
    let epsilon_v = epsilon_v.unwrap_or(WatermarkConfig::default().verify_threshold);
    if !(0.0..=1.0).contains(&epsilon_v) {
        return Err(CliError::Usage(format!("--epsilon-v must lie in [0, 1], got {epsilon_v}")));
    }
    let model = load_model(model)?;
    let trigger = load_trigger(trigger)?;
    let wm_acc = trigger_accuracy(&model, &trigger)?;
    Ok(VerifyResult {
        wm_acc,
        epsilon_v,
        verdict: wm_acc >= epsilon_v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOutput {
    pub client_id: usize,
    /// FSS under every record, in record order.
    pub fss: Vec<f64>,
    pub tied: bool,
    pub hd_client_id: usize,
    pub hd_distances: Vec<usize>,
    pub hd_ambiguous: bool,
}

pub fn trace_checkpoint(model: &Path, records: &Path) -> Result<TraceOutput> {
    let model = load_model(model)?;
    let records = load_records(records)?;
    let w = model.gamma_vector();
    let t = trace(&w, &records)?;
    let h = hd_trace(&w, &records)?;
    Ok(TraceOutput {
        client_id: t.client_id,
        fss: t.scores,
        tied: t.tied,
        hd_client_id: h.client_id,
        hd_distances: h.distances,
        hd_ambiguous: h.ambiguous,
    })
}

pub struct AttackArgs<'a> {
    pub model: &'a Path,
    pub spec: &'a str,
    pub records: &'a Path,
    pub trigger: &'a Path,
    pub config: Option<&'a Path>,
    pub adversary: Option<usize>,
    pub seed: Option<u64>,
    pub epsilon_v: Option<f32>,
    pub out: &'a Path,
}

/// Attacks one checkpoint. The adversary's local data is rebuilt from the
/// configuration, so it matches the shard that client trained on.
pub fn attack(args: &AttackArgs<'_>) -> Result<AttackOutcome> {
    let spec: AttackSpec = args.spec.parse()?;
    let cfg = effective_config(args.config, args.seed, None)?;
    let victim = load_model(args.model)?;
    let records = load_records(args.records)?;
    let trigger = load_trigger(args.trigger)?;
    let (client_data, test) = build_data(&cfg)?;

    let adversary = match args.adversary {
        Some(a) => a,
        None => trace(&victim.gamma_vector(), &records)?.client_id,
    };
    let adv_data = client_data
        .get(adversary)
        .ok_or_else(|| CliError::Usage(format!("adversary {adversary} is not one of the {} clients", cfg.fl.clients)))?;
    let ctx = AttackContext {
        adv_data,
        batch_size: cfg.fl.batch_size,
        fingerprint: &cfg.fingerprint,
    };
    let mut rng = derive_rng(cfg.seed, Stream::Attack, adversary as u64);
    let attacked = apply_attack(&spec, &victim, &ctx, &mut rng)?;

    let judge = Judge {
        trigger: &trigger,
        records: &records,
        test: &test,
        epsilon_v: args.epsilon_v.unwrap_or(cfg.watermark.verify_threshold),
        tau: cfg.utility_drop,
    };
    let outcome = evaluate_attack(&spec.to_string(), &victim, &attacked, &judge, adversary)?;

    create_dir(args.out)?;
    save_model(&args.out.join("attacked.ftck"), &attacked)?;
    write_json(&args.out.join("outcome.json"), &outcome)?;
    Ok(outcome)
}
