//! Client-side training and server-side aggregation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BnMlp, Mode, ParamVector};

/// Mini-batch SGD for `epochs` passes over `data`, shuffling every epoch.
///
/// A trailing batch with a single sample is dropped because batch statistics
/// are undefined for it. A zero learning rate is a no-op: the running BN
/// statistics are not refreshed either. Returns the mean training loss of
/// each epoch (empty when nothing ran).
pub fn local_train<R: Rng + ?Sized>(
    model: &mut BnMlp,
    data: &Dataset,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("client has no data".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if lr == 0.0 {
        return Ok(Vec::new());
    }
    let previous = model.mode();
    model.set_mode(Mode::Train);
    let min_rows = if model.bn_frozen() { 1 } else { 2 };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < min_rows {
                continue;
            }
            let batch = data.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = model.backward(&batch, &labels)?;
            model.sgd_step(&grads, lr)?;
            total += loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        losses.push(if seen > 0 { (total / seen as f64) as f32 } else { f32::NAN });
    }
    model.set_mode(previous);
    Ok(losses)
}

/// Weighted parameter average with weights `wᵢ / Σ wⱼ`, accumulated in `f64`
/// in list order.
pub fn fedavg(models: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    if weights.len() != models.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} models",
            weights.len(),
            models.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("aggregation weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    let mut acc = vec![0.0f64; first.len()];
    for (m, &w) in models.iter().zip(weights) {
        first.check_layout(m)?;
        let share = w / total;
        for (a, &v) in acc.iter_mut().zip(m.values()) {
            *a += share * v as f64;
        }
    }
    ParamVector::new(first.layout().clone(), acc.into_iter().map(|v| v as f32).collect())
}
