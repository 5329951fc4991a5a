//! Federated training rounds with server-side protection.
//!
//! Each round samples clients, trains them locally from the models they last
//! received, aggregates the results, embeds the watermark into the aggregate
//! and hands every client its own fingerprinted copy of the watermarked model.

mod client;

pub use client::{fedavg, local_train};

use log::{debug, warn};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{partition_dirichlet, partition_iid, Dataset};
use crate::error::{Error, Result};
use crate::fingerprint::{gen, hd_trace, linsert, trace, FingerprintConfig, FingerprintRecord};
use crate::nn::BnMlp;
use crate::seed::{derive_rng, derive_seed, Stream};
use crate::watermark::{
    gembed, gen_trigger_set, trigger_accuracy, EmbedMode, GembedOutcome, GlobalMemory, TriggerSet,
    WatermarkConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    /// Number of clients `K`.
    pub clients: usize,
    /// Number of rounds `T`.
    pub rounds: usize,
    /// Fraction of clients trained per round; `⌈fraction·K⌉` are sampled.
    pub participation_fraction: f64,
    pub local_epochs: usize,
    pub client_lr: f32,
    pub batch_size: usize,
    /// Hidden widths of the Dense–BN–ReLU stack.
    pub hidden: Vec<usize>,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 30,
            participation_fraction: 0.4,
            local_epochs: 1,
            client_lr: 0.05,
            batch_size: 32,
            hidden: vec![128, 128],
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::InvalidConfig("fl.clients must be >= 1".into()));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::InvalidConfig("fl.participation_fraction must lie in (0, 1]".into()));
        }
        if !(self.client_lr > 0.0 && self.client_lr.is_finite()) {
            return Err(Error::InvalidConfig("fl.client_lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("fl.batch_size must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("fl.hidden needs at least one non-zero width".into()));
        }
        Ok(())
    }

    pub fn sampled_per_round(&self) -> usize {
        ((self.participation_fraction * self.clients as f64).ceil() as usize).clamp(1, self.clients)
    }
}

/// Which protection stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtectionConfig {
    pub watermark: bool,
    pub fingerprint: bool,
    /// Project watermark steps against the global memory.
    pub projection: bool,
    /// Freeze BN while embedding the watermark.
    pub freeze_bn: bool,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        Self {
            watermark: true,
            fingerprint: true,
            projection: true,
            freeze_bn: true,
        }
    }
}

impl ProtectionConfig {
    pub fn none() -> Self {
        Self {
            watermark: false,
            fingerprint: false,
            projection: false,
            freeze_bn: false,
        }
    }
}

/// Metrics of the models as distributed at the end of a round (round 0 is
/// the initial state). Client figures are over all `K` distributed models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean test accuracy of the client models.
    pub test_acc: f32,
    /// Mean trigger accuracy of the client models.
    pub wm_acc: f32,
    /// Smallest FSS of a client model under its own record.
    pub min_fss: f64,
    pub mean_fss: f64,
    pub global_test_acc: f32,
    pub global_wm_acc: f32,
    /// Test accuracy of the pre-watermark aggregate (the initial model in
    /// round 0).
    pub aggregate_test_acc: f32,
    pub sampled: Vec<usize>,
    pub gembed: Option<GembedOutcome>,
    /// Clients whose fingerprint insertion hit `max_iter` below `τ_f`.
    pub linsert_unconverged: Vec<usize>,
}

/// Mutable state carried from round to round.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    /// Global model as last distributed (after watermarking).
    pub global: BnMlp,
    /// Pre-watermark aggregate of the latest round.
    pub aggregate: Option<BnMlp>,
    pub memory: GlobalMemory,
    pub clients: Vec<BnMlp>,
    pub metrics: Vec<RoundMetrics>,
}

/// Everything a run needs: configuration, data, protection material and
/// round state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub fl: FlConfig,
    pub watermark: WatermarkConfig,
    pub fingerprint: FingerprintConfig,
    pub protection: ProtectionConfig,
    pub seed: u64,
    pub client_data: Vec<Dataset>,
    pub test: Dataset,
    pub trigger: TriggerSet,
    pub records: Vec<FingerprintRecord>,
    pub state: RoundState,
}

/// Builds the data of an experiment: the pool, a held-out test set and the
/// per-client shards.
pub fn build_data(cfg: &ExperimentConfig) -> Result<(Vec<Dataset>, Dataset)> {
    let pool = cfg.data.load(derive_seed(cfg.seed, Stream::Data, 0))?;
    let (train, test) = pool.split_holdout(cfg.data.test_fraction, derive_seed(cfg.seed, Stream::Holdout, 0))?;
    let part_seed = derive_seed(cfg.seed, Stream::Partition, 0);
    let partition = match cfg.data.dirichlet_xi {
        Some(xi) => partition_dirichlet(&train, cfg.fl.clients, xi, part_seed)?,
        None => partition_iid(&train, cfg.fl.clients, part_seed)?,
    };
    let shards = partition.client_indices.iter().map(|idx| train.subset(idx)).collect();
    Ok((shards, test))
}

impl Simulation {
    /// Sets up data, the initial model and the protection material (trigger
    /// set and fingerprint records are generated once, whatever the
    /// protection flags, so unprotected runs can be scored the same way).
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (client_data, test) = build_data(cfg)?;
        Self::new(cfg, client_data, test)
    }

    pub fn new(cfg: &ExperimentConfig, client_data: Vec<Dataset>, test: Dataset) -> Result<Self> {
        cfg.validate()?;
        if client_data.len() != cfg.fl.clients {
            return Err(Error::InvalidArgument(format!(
                "{} client shards for {} clients",
                client_data.len(),
                cfg.fl.clients
            )));
        }
        let classes = test.class_count;
        let dim = test.dim();
        let mut init_rng = derive_rng(cfg.seed, Stream::ModelInit, 0);
        let global = BnMlp::new(dim, &cfg.fl.hidden, classes, &mut init_rng)?;
        let wm = &cfg.watermark;
        let trigger = gen_trigger_set(
            classes,
            dim,
            wm.per_class,
            wm.pattern_amplitude,
            wm.noise_sigma,
            derive_seed(cfg.seed, Stream::Trigger, 0),
        )?;
        let fp = &cfg.fingerprint;
        let mut ga = fp.ga.clone();
        ga.seed = derive_seed(cfg.seed, Stream::Codes, fp.ga.seed);
        let records = if cfg.fl.clients >= 2 {
            gen(
                cfg.fl.clients,
                fp.bits,
                global.gamma_len(),
                fp.margin,
                &ga,
                derive_seed(cfg.seed, Stream::Keys, 0),
            )?
        } else {
            Vec::new()
        };
        if cfg.protection.fingerprint && records.is_empty() {
            return Err(Error::InvalidConfig("fingerprinting needs at least two clients".into()));
        }
        let memory = GlobalMemory::new(&global.to_params());
        let clients = vec![global.clone(); cfg.fl.clients];
        let mut sim = Simulation {
            fl: cfg.fl.clone(),
            watermark: cfg.watermark.clone(),
            fingerprint: cfg.fingerprint.clone(),
            protection: cfg.protection,
            seed: cfg.seed,
            client_data,
            test,
            trigger,
            records,
            state: RoundState {
                round: 0,
                global,
                aggregate: None,
                memory,
                clients,
                metrics: Vec::new(),
            },
        };
        let initial = sim.evaluate(Vec::new(), None, Vec::new())?;
        sim.state.metrics.push(initial);
        Ok(sim)
    }

    /// One round: local training of the sampled clients, aggregation,
    /// watermark embedding, per-client fingerprint insertion, distribution.
    pub fn run_round(&mut self) -> Result<&RoundMetrics> {
        let round = self.state.round + 1;
        let k = self.fl.clients;
        let mut sampler = derive_rng(self.seed, Stream::Sampling, round as u64);
        let mut sampled = sample(&mut sampler, k, self.fl.sampled_per_round()).into_vec();
        sampled.sort_unstable();

        // stage 1: local training, in parallel over the sampled clients
        let fl = &self.fl;
        let seed = self.seed;
        let data = &self.client_data;
        let mut trained: Vec<(usize, BnMlp)> = sampled
            .par_iter()
            .map(|&i| {
                let mut model = self.state.clients[i].clone();
                let mut rng = derive_rng(seed, Stream::LocalTrain, (round * k + i) as u64);
                local_train(&mut model, &data[i], fl.local_epochs, fl.client_lr, fl.batch_size, &mut rng)?;
                Ok((i, model))
            })
            .collect::<Result<Vec<_>>>()?;
        trained.sort_by_key(|(i, _)| *i);

        // stage 2: aggregation over the sampled clients, in client order
        let params: Vec<_> = trained.iter().map(|(_, m)| m.to_params()).collect();
        let weights: Vec<f64> = trained.iter().map(|(i, _)| data[*i].len() as f64).collect();
        let aggregate = fedavg(&params, &weights)?;
        let mut global = self.state.global.clone();
        global.load_params(&aggregate)?;
        for (i, m) in trained {
            self.state.clients[i] = m;
        }
        self.state.aggregate = Some(global.clone());

        // stage 3: watermark embedding, preceded by the memory update
        let gembed_outcome = if self.protection.watermark {
            self.state.memory.update(&self.state.global.to_params(), &aggregate)?;
            let mode = EmbedMode {
                project: self.protection.projection,
                freeze_bn: self.protection.freeze_bn,
            };
            let out = gembed(&mut global, &self.trigger, &self.state.memory, &self.watermark, mode)?;
            if out.final_acc <= self.watermark.acc_threshold {
                warn!(
                    "round {round}: watermark embedding stopped at trigger accuracy {:.3} after {} steps",
                    out.final_acc, out.steps
                );
            }
            Some(out)
        } else {
            None
        };

        // stage 4: fingerprint insertion into copies of the watermarked model
        let mut unconverged = Vec::new();
        if self.protection.fingerprint {
            let results: Vec<_> = self
                .records
                .par_iter()
                .map(|r| {
                    let mut m = global.clone();
                    let out = linsert(&mut m, r, &self.fingerprint)?;
                    Ok((m, out))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, (m, out)) in results.into_iter().enumerate() {
                if !out.converged {
                    warn!(
                        "round {round}: fingerprint insertion for client {i} stopped at FSS {:.4} after {} steps",
                        out.fss, out.iterations
                    );
                    unconverged.push(i);
                }
                self.state.clients[i] = m;
            }
        } else {
            self.state.clients.iter_mut().for_each(|c| *c = global.clone());
        }
        self.state.global = global;
        self.state.round = round;
        let metrics = self.evaluate(sampled, gembed_outcome, unconverged)?;
        debug!(
            "round {round}: test {:.4} wm {:.4} min fss {:.4}",
            metrics.test_acc, metrics.wm_acc, metrics.min_fss
        );
        self.state.metrics.push(metrics);
        Ok(self.state.metrics.last().expect("just pushed"))
    }

    fn evaluate(
        &self,
        sampled: Vec<usize>,
        gembed: Option<GembedOutcome>,
        linsert_unconverged: Vec<usize>,
    ) -> Result<RoundMetrics> {
        let per_client: Vec<(f32, f32, f64)> = self
            .state
            .clients
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let test = m.accuracy(&self.test.features, &self.test.labels)?;
                let wm = trigger_accuracy(m, &self.trigger)?;
                let fss = match self.records.get(i) {
                    Some(r) => r.score(&m.gamma_vector())?,
                    None => f64::NAN,
                };
                Ok((test, wm, fss))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_client.len() as f32;
        let fss: Vec<f64> = per_client.iter().map(|c| c.2).collect();
        Ok(RoundMetrics {
            round: self.state.round,
            test_acc: per_client.iter().map(|c| c.0).sum::<f32>() / n,
            wm_acc: per_client.iter().map(|c| c.1).sum::<f32>() / n,
            min_fss: fss.iter().copied().fold(f64::INFINITY, f64::min),
            mean_fss: fss.iter().sum::<f64>() / fss.len() as f64,
            global_test_acc: self.state.global.accuracy(&self.test.features, &self.test.labels)?,
            global_wm_acc: trigger_accuracy(&self.state.global, &self.trigger)?,
            aggregate_test_acc: self
                .state
                .aggregate
                .as_ref()
                .unwrap_or(&self.state.global)
                .accuracy(&self.test.features, &self.test.labels)?,
            sampled,
            gembed,
            linsert_unconverged,
        })
    }

    pub fn run(&mut self) -> Result<()> {
        while self.state.round < self.fl.rounds {
            self.run_round()?;
        }
        Ok(())
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.state.metrics
    }

    /// Traceability rate of the current client models.
    pub fn traceability_rate(&self) -> Result<f64> {
        let w: Vec<Vec<f32>> = self.state.clients.iter().map(|m| m.gamma_vector()).collect();
        crate::fingerprint::traceability_rate(&w, &self.records)
    }

    /// Fraction of client models on which Hamming-distance tracing names the
    /// same client as FSS tracing.
    pub fn hd_agreement(&self) -> Result<f64> {
        let mut agree = 0;
        for m in &self.state.clients {
            let w = m.gamma_vector();
            let hd = hd_trace(&w, &self.records)?;
            if !hd.ambiguous && hd.client_id == trace(&w, &self.records)?.client_id {
                agree += 1;
            }
        }
        Ok(agree as f64 / self.state.clients.len() as f64)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Round 0 (initialization) followed by one row per round.
    pub metrics: Vec<RoundMetrics>,
    pub traceability_rate: Option<f64>,
    pub hd_agreement: Option<f64>,
    pub simulation: Simulation,
}

impl ExperimentReport {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.metrics.last().expect("round 0 is always present")
    }
}

/// Runs `Gen` and then `T` rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut sim = Simulation::from_config(cfg)?;
    sim.run()?;
    let (tr, hd) = if sim.records.is_empty() {
        (None, None)
    } else {
        (Some(sim.traceability_rate()?), Some(sim.hd_agreement()?))
    };
    Ok(ExperimentReport {
        metrics: sim.state.metrics.clone(),
        traceability_rate: tr,
        hd_agreement: hd,
        simulation: sim,
    })
}
