//! Watermark and fingerprint removal attacks, and the verdict on whether the
//! protection survived them.
//!
//! An attack fails when the protection survives it (the model still verifies
//! and still traces to the adversary), or when the removal costs more than
//! `τ` of test accuracy so the stolen model is no longer worth much.

mod spec;

pub use spec::{AttackSpec, Precision, ATTACK_NAMES};

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fingerprint::{linsert, random_codes, trace_model, FingerprintConfig, FingerprintRecord, LinsertOutcome};
use crate::nn::{BnMlp, ParamKind, Tensor2};
use crate::seed::{derive_rng, Stream};
use crate::sim::{local_train, Simulation};
use crate::watermark::{trigger_accuracy, TriggerSet};

/// Default utility-drop threshold `τ` (fraction of test accuracy).
pub const DEFAULT_UTILITY_DROP: f32 = 0.05;

/// Plain SGD on the adversary's own data with every layer trainable.
pub fn finetune_attack<R: Rng + ?Sized>(
    model: &BnMlp,
    adv_data: &Dataset,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    rng: &mut R,
) -> Result<BnMlp> {
    let mut m = model.clone();
    m.set_bn_frozen(false);
    local_train(&mut m, adv_data, epochs, lr, batch_size, rng)?;
    Ok(m)
}

/// Zeroes the `⌊rate·count⌋` smallest-magnitude entries, selected by one
/// global threshold: dense weights across all layers (biases exempt) when
/// `include_bn` is false, BN scales otherwise. Equal magnitudes are taken in
/// layout order.
pub fn prune_attack(model: &BnMlp, rate: f64, include_bn: bool) -> Result<BnMlp> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("pruning rate {rate} must lie in [0, 1)")));
    }
    let target = if include_bn {
        ParamKind::BnGamma
    } else {
        ParamKind::DenseWeight
    };
    let mut params = model.to_params();
    let mask = params.layout().mask(|k| k == target);
    let mut candidates: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let count = (rate * candidates.len() as f64).floor() as usize;
    let values = params.values_mut();
    candidates.sort_by(|&a, &b| {
        values[a]
            .abs()
            .partial_cmp(&values[b].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in &candidates[..count] {
        values[i] = 0.0;
    }
    let mut out = model.clone();
    out.load_params(&params)?;
    Ok(out)
}

/// Round-trips every learnable tensor through a lower precision. BN running
/// statistics stay in 32-bit.
pub fn quantize_attack(model: &BnMlp, precision: Precision) -> Result<BnMlp> {
    let mut params = model.to_params();
    let layout = params.layout().clone();
    let values = params.values_mut();
    for e in layout.entries() {
        if e.kind.is_buffer() {
            continue;
        }
        let slice = &mut values[e.offset..e.offset + e.len];
        match precision {
            Precision::F32 => {}
            Precision::F16 => {
                for v in slice.iter_mut() {
                    *v = half::f16::from_f32(*v).to_f32();
                }
            }
            Precision::I8 => {
                let scale = int8_scale(slice);
                if scale > 0.0 {
                    for v in slice.iter_mut() {
                        *v = (*v / scale).round().clamp(-127.0, 127.0) * scale;
                    }
                }
            }
        }
    }
    let mut out = model.clone();
    out.load_params(&params)?;
    Ok(out)
}

/// Symmetric per-tensor int8 scale `max|w| / 127`.
pub fn int8_scale(values: &[f32]) -> f32 {
    values.iter().fold(0.0f32, |m, v| m.max(v.abs())) / 127.0
}

/// The adversary draws a fresh code and Gaussian key and inserts them into
/// the victim's BN scales with the same procedure the server uses.
pub fn overwrite_attack<R: Rng + ?Sized>(
    model: &BnMlp,
    cfg: &FingerprintConfig,
    rng: &mut R,
) -> Result<(BnMlp, FingerprintRecord, LinsertOutcome)> {
    let m = model.gamma_len();
    let n = cfg.bits;
    let code = random_codes(1, n, rng).pop().expect("one code");
    let key_data = (0..m * n).map(|_| StandardNormal.sample(rng)).collect();
    let record = FingerprintRecord {
        client_id: usize::MAX,
        code,
        key: Tensor2::from_vec(m, n, key_data)?,
        delta: cfg.margin,
    };
    let mut out = model.clone();
    let outcome = linsert(&mut out, &record, cfg)?;
    Ok((out, record, outcome))
}

/// Inputs an attack may need beyond the victim model.
pub struct AttackContext<'a> {
    pub adv_data: &'a Dataset,
    pub batch_size: usize,
    pub fingerprint: &'a FingerprintConfig,
}

/// Applies one attack setting.
pub fn apply_attack<R: Rng + ?Sized>(
    spec: &AttackSpec,
    model: &BnMlp,
    ctx: &AttackContext<'_>,
    rng: &mut R,
) -> Result<BnMlp> {
    match *spec {
        AttackSpec::FineTune { epochs, lr } => finetune_attack(model, ctx.adv_data, epochs, lr, ctx.batch_size, rng),
        AttackSpec::Prune { rate, include_bn } => prune_attack(model, rate, include_bn),
        AttackSpec::Quantize(p) => quantize_attack(model, p),
        AttackSpec::Overwrite => overwrite_attack(model, ctx.fingerprint, rng).map(|(m, _, _)| m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Protection survived: the model verifies and traces to the adversary.
    RobustCase1,
    /// Protection was damaged, but so was the model's utility.
    RobustCase2,
    Broken,
}

/// Case 1 when the attacked model verifies and traces to the adversary;
/// otherwise Case 2 when test accuracy dropped by more than `tau`; otherwise
/// broken.
pub fn verdict(verified: bool, traced_id: usize, adversary: usize, accuracy_drop: f32, tau: f32) -> Verdict {
    if verified && traced_id == adversary {
        Verdict::RobustCase1
    } else if accuracy_drop > tau {
        Verdict::RobustCase2
    } else {
        Verdict::Broken
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: String,
    pub adversary: usize,
    pub test_acc_before: f32,
    pub test_acc_after: f32,
    pub wm_acc_before: f32,
    pub wm_acc_after: f32,
    /// FSS under every record, in record order.
    pub fss_before: Vec<f64>,
    pub fss_after: Vec<f64>,
    pub traced_id_before: usize,
    pub traced_id_after: usize,
    pub verified_after: bool,
    pub verdict: Verdict,
}

impl AttackOutcome {
    /// FSS of the adversary's own record before and after.
    pub fn adversary_fss(&self) -> (f64, f64) {
        (self.fss_before[self.adversary], self.fss_after[self.adversary])
    }
}

/// Everything needed to score an attack.
pub struct Judge<'a> {
    pub trigger: &'a TriggerSet,
    pub records: &'a [FingerprintRecord],
    pub test: &'a Dataset,
    pub epsilon_v: f32,
    pub tau: f32,
}

/// Scores `after` against `before` for the adversary `adv_id`.
pub fn evaluate_attack(
    name: &str,
    before: &BnMlp,
    after: &BnMlp,
    judge: &Judge<'_>,
    adv_id: usize,
) -> Result<AttackOutcome> {
    if adv_id >= judge.records.len() || judge.records[adv_id].client_id != adv_id {
        return Err(Error::InvalidArgument(format!("no record for adversary {adv_id}")));
    }
    let test_acc = |m: &BnMlp| m.accuracy(&judge.test.features, &judge.test.labels);
    let t_before = trace_model(before, judge.records)?;
    let t_after = trace_model(after, judge.records)?;
    let (test_acc_before, test_acc_after) = (test_acc(before)?, test_acc(after)?);
    let wm_acc_after = trigger_accuracy(after, judge.trigger)?;
    let verified_after = wm_acc_after >= judge.epsilon_v;
    Ok(AttackOutcome {
        attack: name.to_string(),
        adversary: adv_id,
        test_acc_before,
        test_acc_after,
        wm_acc_before: trigger_accuracy(before, judge.trigger)?,
        wm_acc_after,
        fss_before: t_before.scores,
        fss_after: t_after.scores,
        traced_id_before: t_before.client_id,
        traced_id_after: t_after.client_id,
        verified_after,
        verdict: verdict(
            verified_after,
            t_after.client_id,
            adv_id,
            test_acc_before - test_acc_after,
            judge.tau,
        ),
    })
}

/// Runs every attack against the current model of every adversary. Each
/// (attack, adversary) pair draws from its own RNG stream, so the outcomes do
/// not depend on the order of the sweep.
pub fn attack_sweep(
    sim: &Simulation,
    specs: &[AttackSpec],
    adversaries: &[usize],
    tau: f32,
) -> Result<Vec<AttackOutcome>> {
    let judge = Judge {
        trigger: &sim.trigger,
        records: &sim.records,
        test: &sim.test,
        epsilon_v: sim.watermark.verify_threshold,
        tau,
    };
    let mut out = Vec::with_capacity(specs.len() * adversaries.len());
    for (s, spec) in specs.iter().enumerate() {
        for &adv in adversaries {
            let victim = sim
                .state
                .clients
                .get(adv)
                .ok_or_else(|| Error::InvalidArgument(format!("no client {adv}")))?;
            let ctx = AttackContext {
                adv_data: &sim.client_data[adv],
                batch_size: sim.fl.batch_size,
                fingerprint: &sim.fingerprint,
            };
            let index = (s * sim.fl.clients + adv) as u64;
            let mut rng = derive_rng(sim.seed, Stream::Attack, index);
            let attacked = apply_attack(spec, victim, &ctx, &mut rng)?;
            out.push(evaluate_attack(&spec.to_string(), victim, &attacked, &judge, adv)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn model() -> BnMlp {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = BnMlp::new(5, &[6, 4], 3, &mut rng).unwrap();
        let mut p = m.to_params();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v += (i as f32 * 0.37).sin();
        }
        m.load_params(&p).unwrap();
        m
    }

    #[test]
    fn zero_rate_pruning_is_identity() {
        let m = model();
        assert_eq!(prune_attack(&m, 0.0, false).unwrap(), m);
        assert_eq!(prune_attack(&m, 0.0, true).unwrap(), m);
        assert!(prune_attack(&m, 1.0, false).is_err());
    }

    #[test]
    fn pruning_zeroes_exactly_the_smallest_weights() {
        let m = model();
        let pruned = prune_attack(&m, 0.5, false).unwrap();
        let before = m.to_params();
        let after = pruned.to_params();
        let mask = before.layout().mask(|k| k == ParamKind::DenseWeight);
        let mut mags: Vec<f32> = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| before.values()[i].abs())
            .collect();
        let count = mags.len() / 2;
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let threshold = mags[count - 1];
        let mut zeroed = 0;
        for i in 0..mask.len() {
            let (b, a) = (before.values()[i], after.values()[i]);
            if !mask[i] {
                assert_eq!(a, b, "non-weight entry {i} changed");
            } else if a == 0.0 && b != 0.0 {
                zeroed += 1;
                assert!(b.abs() <= threshold);
            } else {
                assert_eq!(a, b);
                assert!(b.abs() >= threshold);
            }
        }
        assert_eq!(zeroed, count);
        assert_eq!(prune_attack(&pruned, 0.5, false).unwrap(), pruned);
    }

    #[test]
    fn bn_pruning_touches_only_gammas() {
        let m = model();
        let pruned = prune_attack(&m, 0.5, true).unwrap();
        let zeros = pruned.gamma_vector().iter().filter(|&&g| g == 0.0).count();
        assert_eq!(zeros, m.gamma_len() / 2);
        assert_eq!(pruned.head(), m.head());
    }

    #[test]
    fn quantization_properties() {
        let m = model();
        assert_eq!(quantize_attack(&m, Precision::F32).unwrap(), m);
        let h = quantize_attack(&m, Precision::F16).unwrap();
        assert_eq!(quantize_attack(&h, Precision::F16).unwrap(), h);
        let q = quantize_attack(&m, Precision::I8).unwrap();
        let (before, after) = (m.to_params(), q.to_params());
        for e in before.layout().entries() {
            let b = &before.values()[e.offset..e.offset + e.len];
            let a = &after.values()[e.offset..e.offset + e.len];
            if e.kind.is_buffer() {
                assert_eq!(a, b);
                continue;
            }
            let scale = int8_scale(b);
            for (x, y) in b.iter().zip(a) {
                assert!((x - y).abs() <= scale / 2.0 * (1.0 + 1e-5), "{}: {x} -> {y}", e.name);
            }
        }
    }

    #[test]
    fn verdict_is_total() {
        assert_eq!(verdict(true, 3, 3, 0.5, 0.05), Verdict::RobustCase1);
        assert_eq!(verdict(true, 2, 3, 0.06, 0.05), Verdict::RobustCase2);
        assert_eq!(verdict(false, 3, 3, 0.06, 0.05), Verdict::RobustCase2);
        assert_eq!(verdict(false, 3, 3, 0.05, 0.05), Verdict::Broken);
        assert_eq!(verdict(true, 1, 3, 0.0, 0.05), Verdict::Broken);
    }
}
