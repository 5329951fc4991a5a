//! Key responses, the hinge-like insertion loss, fingerprint similarity
//! scores, insertion into BN scales and leaker tracing.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::codes::{generate_codes, hamming, Code, GaParams};
use crate::error::{Error, Result};
use crate::nn::{BnMlp, Tensor2};

/// One client's fingerprint: the code `F`, the secret key `A` (`M × N`,
/// standard normal entries) and the margin `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub client_id: usize,
    pub code: Code,
    pub key: Tensor2,
    pub delta: f32,
}

impl FingerprintRecord {
    pub fn bits(&self) -> usize {
        self.code.len()
    }

    pub fn key_rows(&self) -> usize {
        self.key.rows()
    }

    /// FSS of this record against a BN scale vector.
    pub fn score(&self, w_gamma: &[f32]) -> Result<f64> {
        fss(&self.key, &self.code, w_gamma, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    /// Code length `N`.
    pub bits: usize,
    /// Insertion step `λ_f`.
    pub lr: f32,
    /// Insertion stops once the FSS reaches `τ_f`.
    pub fss_threshold: f64,
    pub max_iter: usize,
    /// Margin `δ`.
    pub margin: f32,
    pub ga: GaParams,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            bits: 128,
            lr: 0.05,
            fss_threshold: 0.95,
            max_iter: 500,
            margin: 0.1,
            ga: GaParams::default(),
        }
    }
}

impl FingerprintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::InvalidConfig("fingerprint.bits must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("fingerprint.lr must be > 0".into()));
        }
        if !(self.fss_threshold > 0.0 && self.fss_threshold <= 1.0) {
            return Err(Error::InvalidConfig("fingerprint.fss_threshold must lie in (0, 1]".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig("fingerprint.margin must be > 0".into()));
        }
        Ok(())
    }
}

/// Generates `k` fingerprint records for a model with `m` BN scales: codes
/// from [`generate_codes`] (GA seeded from `ga.seed`) and independent standard
/// normal keys drawn from `seed`.
///
/// When `k·n ≤ m` a single scale vector could carry every fingerprint at
/// once; this is reported as a warning rather than refused.
pub fn gen(k: usize, n: usize, m: usize, delta: f32, ga: &GaParams, seed: u64) -> Result<Vec<FingerprintRecord>> {
    if m == 0 {
        return Err(Error::InvalidArgument("model has no BN scales".into()));
    }
    if k * n <= m {
        warn!("K·N = {} does not exceed M = {m}; fingerprints may be ambiguous", k * n);
    }
    let codes = generate_codes(k, n, ga)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(codes
        .into_iter()
        .enumerate()
        .map(|(client_id, code)| {
            let data = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            FingerprintRecord {
                client_id,
                code,
                key: Tensor2::from_vec(m, n, data).expect("sized above"),
                delta,
            }
        })
        .collect())
}

fn check_dims(key: &Tensor2, code_len: Option<usize>, w: &[f32]) -> Result<()> {
    if key.rows() != w.len() {
        return Err(Error::Shape(format!("key has {} rows but W^γ has {} entries", key.rows(), w.len())));
    }
    if let Some(n) = code_len {
        if n != key.cols() {
            return Err(Error::Shape(format!("key has {} columns but the code has {n} bits", key.cols())));
        }
    }
    Ok(())
}

/// `B = Aᵀ·W` for an `M × N` key and an `M`-vector of scales.
pub fn response(key: &Tensor2, w_gamma: &[f32]) -> Result<Vec<f64>> {
    check_dims(key, None, w_gamma)?;
    let mut b = vec![0.0f64; key.cols()];
    for (r, &w) in w_gamma.iter().enumerate() {
        let w = w as f64;
        for (acc, &a) in b.iter_mut().zip(key.row(r)) {
            *acc += a as f64 * w;
        }
    }
    Ok(b)
}

/// `Σ_j max(δ − b_j f_j, 0)`.
pub fn hinge_loss(key: &Tensor2, code: &[i8], w_gamma: &[f32], delta: f32) -> Result<f64> {
    check_dims(key, Some(code.len()), w_gamma)?;
    let b = response(key, w_gamma)?;
    Ok(hinge_from_response(&b, code, delta as f64))
}

fn hinge_from_response(b: &[f64], code: &[i8], delta: f64) -> f64 {
    b.iter()
        .zip(code)
        .map(|(&b, &f)| (delta - b * f as f64).max(0.0))
        .sum()
}

fn fss_from_response(b: &[f64], code: &[i8], delta: f64) -> f64 {
    let total: f64 = b.iter().zip(code).map(|(&b, &f)| (b * f as f64).min(delta)).sum();
    total / (code.len() as f64 * delta)
}

/// Fingerprint similarity score `Σ_j min(δ, b_j f_j) / (N·δ)`. It is at most
/// 1, with equality exactly when every bit meets the margin.
pub fn fss(key: &Tensor2, code: &[i8], w_gamma: &[f32], delta: f32) -> Result<f64> {
    check_dims(key, Some(code.len()), w_gamma)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("margin {delta} must be positive")));
    }
    Ok(fss_from_response(&response(key, w_gamma)?, code, delta as f64))
}

/// `sgn(Aᵀ·W)` with zero mapped to `+1`.
pub fn extract_code(key: &Tensor2, w_gamma: &[f32]) -> Result<Code> {
    Ok(response(key, w_gamma)?
        .into_iter()
        .map(|b| if b >= 0.0 { 1 } else { -1 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinsertOutcome {
    pub iterations: usize,
    pub fss: f64,
    pub hinge: f64,
    /// True when the FSS threshold was reached.
    pub converged: bool,
}

/// Gradient descent on the hinge loss with respect to the BN scales only.
///
/// The subgradient is `−Σ_{violated j} f_j·A[:, j]` and the step is `λ_f`.
/// A step that would raise the loss is retried at half the length (up to 30
/// times) so the loss never increases; if no shorter step helps either, the
/// insertion stops early. Every parameter other than the BN scales is left
/// untouched.
pub fn linsert(model: &mut BnMlp, record: &FingerprintRecord, cfg: &FingerprintConfig) -> Result<LinsertOutcome> {
    let mut w = model.gamma_vector();
    check_dims(&record.key, Some(record.code.len()), &w)?;
    let delta = record.delta as f64;
    let key = &record.key;
    let mut b = response(key, &w)?;
    let mut loss = hinge_from_response(&b, &record.code, delta);
    let mut score = fss_from_response(&b, &record.code, delta);
    let mut iterations = 0;
    let mut grad = vec![0.0f64; w.len()];
    let mut trial = w.clone();
    'outer: while score < cfg.fss_threshold && iterations < cfg.max_iter {
        grad.fill(0.0);
        for (r, g) in grad.iter_mut().enumerate() {
            let row = key.row(r);
            for (j, (&bj, &f)) in b.iter().zip(&record.code).enumerate() {
                if delta - bj * f as f64 > 0.0 {
                    *g -= f as f64 * row[j] as f64;
                }
            }
        }
        iterations += 1;
        let mut step = cfg.lr as f64;
        for _ in 0..=30 {
            for ((t, &wv), &g) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = (wv as f64 - step * g) as f32;
            }
            let tb = response(key, &trial)?;
            let tl = hinge_from_response(&tb, &record.code, delta);
            if tl <= loss && trial != w {
                std::mem::swap(&mut w, &mut trial);
                b = tb;
                loss = tl;
                score = fss_from_response(&b, &record.code, delta);
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    model.set_gamma_vector(&w)?;
    Ok(LinsertOutcome {
        iterations,
        fss: score,
        hinge: loss,
        converged: score >= cfg.fss_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    /// Client with the highest FSS; the lowest id among equal scores.
    pub client_id: usize,
    /// FSS per record, in record order.
    pub scores: Vec<f64>,
    pub tied: bool,
}

/// Identifies the record whose key yields the highest FSS on `w_gamma`.
pub fn trace(w_gamma: &[f32], records: &[FingerprintRecord]) -> Result<TraceResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no fingerprint records to trace against".into()));
    }
    let scores = records
        .iter()
        .map(|r| r.score(w_gamma))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (s == scores[best] && records[i].client_id < records[best].client_id) {
            best = i;
        }
    }
    let tied = scores
        .iter()
        .enumerate()
        .any(|(i, &s)| i != best && s == scores[best]);
    if tied {
        warn!("trace tie at FSS {}; reporting lowest client id", scores[best]);
    }
    Ok(TraceResult {
        client_id: records[best].client_id,
        scores,
        tied,
    })
}

pub fn trace_model(model: &BnMlp, records: &[FingerprintRecord]) -> Result<TraceResult> {
    trace(&model.gamma_vector(), records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdTraceResult {
    /// Client at the smallest Hamming distance; the lowest id among ties.
    pub client_id: usize,
    /// Distance between each record's code and the code extracted with that
    /// record's key.
    pub distances: Vec<usize>,
    /// More than one record attains the minimum distance.
    pub ambiguous: bool,
}

/// Tracing by the Hamming distance between `sgn(Aᵢᵀ·W)` and `Fᵢ`.
pub fn hd_trace(w_gamma: &[f32], records: &[FingerprintRecord]) -> Result<HdTraceResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no fingerprint records to trace against".into()));
    }
    let distances = records
        .iter()
        .map(|r| hamming(&extract_code(&r.key, w_gamma)?, &r.code))
        .collect::<Result<Vec<_>>>()?;
    let min = *distances.iter().min().expect("non-empty");
    let winners: Vec<usize> = (0..records.len()).filter(|&i| distances[i] == min).collect();
    let best = *winners
        .iter()
        .min_by_key(|&&i| records[i].client_id)
        .expect("non-empty");
    Ok(HdTraceResult {
        client_id: records[best].client_id,
        distances,
        ambiguous: winners.len() > 1,
    })
}

/// Fraction of scale vectors whose trace returns the client that the record
/// at the same position belongs to.
pub fn traceability_rate(w_gammas: &[Vec<f32>], records: &[FingerprintRecord]) -> Result<f64> {
    if w_gammas.len() != records.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} records",
            w_gammas.len(),
            records.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("no fingerprint records".into()));
    }
    let mut hits = 0;
    for (w, r) in w_gammas.iter().zip(records) {
        if trace(w, records)?.client_id == r.client_id {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn key(rows: usize, cols: usize, data: Vec<f32>) -> Tensor2 {
        Tensor2::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn response_of_zero_and_single_column() {
        let a = key(3, 1, vec![1.0, -2.0, 0.5]);
        assert_eq!(response(&a, &[0.0; 3]).unwrap(), vec![0.0]);
        assert_eq!(response(&a, &[2.0, 1.0, 4.0]).unwrap(), vec![2.0]);
        assert!(response(&a, &[1.0; 2]).is_err());
    }

    #[test]
    fn hinge_hand_values() {
        // identity key: b = W
        let a = key(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let f = [1, -1];
        assert!((hinge_loss(&a, &f, &[0.7, 0.1], 0.5).unwrap() - 0.6).abs() < 1e-7);
        assert!((hinge_loss(&a, &f, &[0.0, 0.0], 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(hinge_loss(&a, &f, &[0.5, -0.5], 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fss_hand_values() {
        let mut data = vec![0.0; 16];
        for i in 0..4 {
            data[i * 4 + i] = 1.0;
        }
        let a = key(4, 4, data);
        let f = [1, 1, 1, 1];
        let s = fss(&a, &f, &[2.0, 1.0, -1.0, 0.5], 1.0).unwrap();
        assert!((s - 0.375).abs() < 1e-12);
        assert_eq!(fss(&a, &f, &[0.0; 4], 1.0).unwrap(), 0.0);
        assert_eq!(fss(&a, &f, &[3.0; 4], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn single_record_always_traced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs = gen(2, 8, 6, 0.1, &GaParams::default(), 1).unwrap();
        let one = &recs[1..];
        let w: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(trace(&w, one).unwrap().client_id, 1);
        assert!(trace(&w, &[]).is_err());
    }

    #[test]
    fn trace_ties_go_to_lowest_id() {
        let mut recs = gen(2, 4, 4, 0.1, &GaParams::default(), 2).unwrap();
        recs[1].key = recs[0].key.clone();
        recs[1].code = recs[0].code.clone();
        let t = trace(&[0.3, -0.2, 0.1, 0.9], &recs).unwrap();
        assert!(t.tied);
        assert_eq!(t.client_id, 0);
    }

    #[test]
    fn hd_trace_flags_equidistant_records() {
        let a = key(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let mk = |id, code: Vec<i8>| FingerprintRecord {
            client_id: id,
            code,
            key: a.clone(),
            delta: 0.1,
        };
        // extracted code is [+, +]
        let recs = vec![mk(0, vec![1, -1]), mk(1, vec![-1, 1])];
        let r = hd_trace(&[1.0, 1.0], &recs).unwrap();
        assert!(r.ambiguous);
        assert_eq!(r.distances, vec![1, 1]);
        assert_eq!(r.client_id, 0);
    }

    #[test]
    fn traceability_rate_counts_matches() {
        let recs = gen(2, 16, 32, 0.1, &GaParams::default(), 5).unwrap();
        let mut models = Vec::new();
        for r in &recs {
            let mut model = BnMlp::new(3, &[32], 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            linsert(&mut model, r, &FingerprintConfig::default()).unwrap();
            models.push(model.gamma_vector());
        }
        assert_eq!(traceability_rate(&models, &recs).unwrap(), 1.0);
        models.swap(0, 1);
        assert_eq!(traceability_rate(&models, &recs).unwrap(), 0.0);
        assert!(traceability_rate(&models[..1], &recs).is_err());
    }

    #[test]
    fn linsert_stops_immediately_when_already_inserted() {
        let recs = gen(2, 16, 32, 0.1, &GaParams::default(), 5).unwrap();
        let mut model = BnMlp::new(3, &[32], 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        linsert(&mut model, &recs[0], &FingerprintConfig::default()).unwrap();
        let before = model.clone();
        let out = linsert(&mut model, &recs[0], &FingerprintConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(model, before);
    }
}
