//! Global memory, gradient projection and constrained watermark embedding.

use serde::{Deserialize, Serialize};

use super::trigger::TriggerSet;
use crate::error::{Error, Result};
use crate::nn::{BnMlp, Mode, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkConfig {
    /// Embedding step `λ_w`.
    pub lr: f32,
    /// Embedding stops once trigger accuracy exceeds `τ_w`.
    pub acc_threshold: f32,
    /// Verification succeeds when trigger accuracy is at least `ε_v`.
    pub verify_threshold: f32,
    pub max_iter: usize,
    pub per_class: usize,
    /// Base patterns are uniform in `±pattern_amplitude`.
    pub pattern_amplitude: f32,
    pub noise_sigma: f32,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            acc_threshold: 0.98,
            verify_threshold: 0.5,
            max_iter: 200,
            per_class: 10,
            pattern_amplitude: 3.0,
            noise_sigma: 0.1,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("watermark.lr must be > 0".into()));
        }
        if !(self.acc_threshold > 0.0 && self.acc_threshold <= 1.0) {
            return Err(Error::InvalidConfig("watermark.acc_threshold must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.verify_threshold) {
            return Err(Error::InvalidConfig("watermark.verify_threshold must lie in [0, 1]".into()));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidConfig("watermark.per_class must be >= 1".into()));
        }
        if !(self.pattern_amplitude > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("watermark pattern amplitude/noise out of range".into()));
        }
        Ok(())
    }
}

/// Accumulated primitive-task direction `m = Σ_j (M_g^{j−1} − M_g^j)`.
///
/// Parameter deltas are negative scaled gradients, so accumulating
/// previous-minus-new points `m` along the summed descent gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMemory {
    pub m: ParamVector,
    pub rounds: usize,
}

impl GlobalMemory {
    pub fn new(template: &ParamVector) -> Self {
        Self {
            m: ParamVector::zeros(template.layout().clone()),
            rounds: 0,
        }
    }

    /// `m ← m + (prev − new)`.
    pub fn update(&mut self, prev: &ParamVector, new: &ParamVector) -> Result<()> {
        let delta = prev.sub(new)?;
        self.m.axpy(1.0, &delta)?;
        self.rounds += 1;
        Ok(())
    }
}

/// Closest point to `g` satisfying `⟨g̃, m⟩ ≥ 0`: unchanged when the
/// constraint already holds (or `m = 0`), otherwise
/// `g̃ = g − (⟨g,m⟩/⟨m,m⟩)·m`.
pub fn project_gradient(g: &ParamVector, m: &ParamVector) -> Result<ParamVector> {
    let gm = g.dot(m)?;
    let mm = m.dot(m)?;
    if gm >= 0.0 || mm == 0.0 {
        return Ok(g.clone());
    }
    let coef = gm / mm;
    let values = g
        .values()
        .iter()
        .zip(m.values())
        .map(|(&gv, &mv)| (gv as f64 - coef * mv as f64) as f32)
        .collect();
    ParamVector::new(g.layout().clone(), values)
}

/// How [`gembed`] constrains its steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedMode {
    /// Project every step against the global memory.
    pub project: bool,
    /// Freeze all BN layers for the duration of the call.
    pub freeze_bn: bool,
}

impl Default for EmbedMode {
    fn default() -> Self {
        Self {
            project: true,
            freeze_bn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GembedOutcome {
    pub steps: usize,
    /// Steps whose gradient had to be projected.
    pub projected_steps: usize,
    pub initial_acc: f32,
    pub final_acc: f32,
    /// Smallest `⟨g̃,m⟩ / (‖g̃‖‖m‖)` over the applied steps (1 when no step
    /// involved a nonzero memory).
    pub min_alignment: f64,
}

/// Retrains the model on the trigger set until its trigger accuracy exceeds
/// `τ_w` or `max_iter` full-batch steps have been taken.
///
/// The memory is restricted to the entries a step can change, so with frozen
/// BN the projection acts on the dense parameters alone. BN freezing is undone
/// before returning; frozen layers are bit-identical across the call.
pub fn gembed(
    model: &mut BnMlp,
    trigger: &TriggerSet,
    memory: &GlobalMemory,
    cfg: &WatermarkConfig,
    mode: EmbedMode,
) -> Result<GembedOutcome> {
    let previous_frozen: Vec<bool> = model.blocks().iter().map(|b| b.bn.frozen).collect();
    let previous_mode = model.mode();
    if mode.freeze_bn {
        model.set_bn_frozen(true);
    }
    model.set_mode(Mode::Train);
    let result = embed_loop(model, trigger, memory, cfg, mode);
    for (b, f) in model.blocks_mut().iter_mut().zip(previous_frozen) {
        b.bn.frozen = f;
    }
    model.set_mode(previous_mode);
    result
}

fn embed_loop(
    model: &mut BnMlp,
    trigger: &TriggerSet,
    memory: &GlobalMemory,
    cfg: &WatermarkConfig,
    mode: EmbedMode,
) -> Result<GembedOutcome> {
    let m = memory.m.masked(&model.trainable_mask());
    let m_norm = m.norm();
    let initial_acc = model.accuracy(&trigger.samples, &trigger.labels)?;
    let mut acc = initial_acc;
    let mut steps = 0;
    let mut projected_steps = 0;
    let mut min_alignment = 1.0f64;
    while steps < cfg.max_iter && acc <= cfg.acc_threshold {
        let (_, g) = model.backward(&trigger.samples, &trigger.labels)?;
        let g = if mode.project && m_norm > 0.0 {
            let projected = project_gradient(&g, &m)?;
            if projected != g {
                projected_steps += 1;
            }
            let denom = projected.norm() * m_norm;
            if denom > 0.0 {
                min_alignment = min_alignment.min(projected.dot(&m)? / denom);
            }
            projected
        } else {
            g
        };
        model.sgd_step(&g, cfg.lr)?;
        steps += 1;
        acc = model.accuracy(&trigger.samples, &trigger.labels)?;
    }
    Ok(GembedOutcome {
        steps,
        projected_steps,
        initial_acc,
        final_acc: acc,
        min_alignment,
    })
}

/// Trigger-set accuracy of the model.
pub fn trigger_accuracy(model: &BnMlp, trigger: &TriggerSet) -> Result<f32> {
    model.accuracy(&trigger.samples, &trigger.labels)
}

/// Ownership check: trigger accuracy at least `ε_v`.
pub fn verify(model: &BnMlp, trigger: &TriggerSet, epsilon_v: f32) -> Result<bool> {
    Ok(trigger_accuracy(model, trigger)? >= epsilon_v)
}
