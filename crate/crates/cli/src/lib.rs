//! Command-line harness for the fedtracker simulator.
//!
//! Exit codes: `0` success, `1` negative verification verdict, `2` invalid
//! input or configuration, `3` filesystem failure.

pub mod commands;
pub mod error;
pub mod output;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "fedtracker", version, about = "Federated learning with watermarked and fingerprinted models")]
pub struct Cli {
    /// Worker threads for local training (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write metrics, report and checkpoints.
    Train {
        /// JSON experiment configuration; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a model's trigger-set accuracy against the threshold.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trigger: PathBuf,
        /// Verification threshold (default 0.5).
        #[arg(long)]
        epsilon_v: Option<f32>,
    },
    /// Identify the client a model was distributed to.
    Trace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
    /// Apply a removal attack to a checkpoint and score it.
    Attack {
        #[arg(long)]
        model: PathBuf,
        /// finetune[:epochs[:lr]], prune:<rate>:<bn|no_bn>, quantize:<f32|f16|i8> or overwrite.
        #[arg(long)]
        attack: String,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        trigger: PathBuf,
        /// Configuration of the run that produced the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Client acting as the adversary (default: the traced client).
        #[arg(long)]
        adversary: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon_v: Option<f32>,
        /// Directory for `attacked.ftck` and `outcome.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Consolidate every run under a directory into CSV tables.
    Report {
        runs_dir: PathBuf,
        /// Table directory (default: RUNS_DIR/tables).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = commands::effective_config(config.as_deref(), seed, out)?;
            let run = commands::train(&cfg)?;
            let last = run.rounds.last().expect("round 0 is always present");
            println!(
                "{}: {} rounds, test_acc {}, wm_acc {}, traceability {}",
                cfg.output_dir.display(),
                last.round,
                last.test_acc,
                last.wm_acc,
                run.traceability_rate.map_or_else(|| "n/a".to_string(), |t| t.to_string()),
            );
            Ok(0)
        }
        Command::Verify {
            model,
            trigger,
            epsilon_v,
        } => {
            let v = commands::verify(&model, &trigger, epsilon_v)?;
            print_json(&v)?;
            Ok(if v.verdict { 0 } else { 1 })
        }
        Command::Trace { model, records } => {
            print_json(&commands::trace_checkpoint(&model, &records)?)?;
            Ok(0)
        }
        Command::Attack {
            model,
            attack,
            records,
            trigger,
            config,
            adversary,
            seed,
            epsilon_v,
            out,
        } => {
            let outcome = commands::attack(&commands::AttackArgs {
                model: &model,
                spec: &attack,
                records: &records,
                trigger: &trigger,
                config: config.as_deref(),
                adversary,
                seed,
                epsilon_v,
                out: &out,
            })?;
            print_json(&outcome)?;
            Ok(0)
        }
        Command::Report { runs_dir, out } => {
            let summary = report::report(&runs_dir, out.as_deref())?;
            for t in &summary.tables {
                println!("{}", t.display());
            }
            Ok(0)
        }
    }
}
