//! Independent oracles shared by the integration tests and the acceptance
//! suite: a scalar `f64` reference network with finite differences, an
//! iterative QP solver for the memory projection, least-squares scale
//! vectors carrying chosen codes, and exhaustive/random code baselines.
#![allow(dead_code)]

use fedtracker::fingerprint::{gen, min_pairwise_distance, random_codes, Code, FingerprintRecord, GaParams};
use fedtracker::nn::{BnMlp, ParamKind, Tensor2};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar view of a model's parameters in `f64`.
#[derive(Clone)]
pub struct RefNet {
    /// per block: (weight[out][in], bias, gamma, beta, running_mean, running_var, frozen)
    blocks: Vec<RefBlock>,
    head_w: Vec<Vec<f64>>,
    head_b: Vec<f64>,
    eps: f64,
}

#[derive(Clone)]
pub struct RefBlock {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    rmean: Vec<f64>,
    rvar: Vec<f64>,
    frozen: bool,
}

impl RefNet {
    pub fn from_model(m: &BnMlp) -> Self {
        let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let rows = |t: &Tensor2| (0..t.rows()).map(|r| to64(t.row(r))).collect::<Vec<_>>();
        RefNet {
            blocks: m
                .blocks()
                .iter()
                .map(|b| RefBlock {
                    w: rows(&b.dense.weight),
                    b: to64(&b.dense.bias),
                    gamma: to64(&b.bn.gamma),
                    beta: to64(&b.bn.beta),
                    rmean: to64(&b.bn.running_mean),
                    rvar: to64(&b.bn.running_var),
                    frozen: b.bn.frozen,
                })
                .collect(),
            head_w: rows(&m.head().weight),
            head_b: to64(&m.head().bias),
            eps: m.blocks()[0].bn.epsilon as f64,
        }
    }

    /// Returns logits and the sign pattern of every ReLU input.
    pub fn forward(&self, x: &[Vec<f64>], train: bool) -> (Vec<Vec<f64>>, Vec<bool>) {
        let n = x.len();
        let mut h: Vec<Vec<f64>> = x.to_vec();
        let mut pattern = Vec::new();
        for blk in &self.blocks {
            let width = blk.b.len();
            let mut pre = vec![vec![0.0; width]; n];
            for s in 0..n {
                for o in 0..width {
                    let mut acc = blk.b[o];
                    for i in 0..h[s].len() {
                        acc += blk.w[o][i] * h[s][i];
                    }
                    pre[s][o] = acc;
                }
            }
            for o in 0..width {
                let (mean, var) = if train && !blk.frozen {
                    let mean = (0..n).map(|s| pre[s][o]).sum::<f64>() / n as f64;
                    let var = (0..n).map(|s| (pre[s][o] - mean).powi(2)).sum::<f64>() / n as f64;
                    (mean, var)
                } else {
                    (blk.rmean[o], blk.rvar[o])
                };
                for row in pre.iter_mut() {
                    let v = blk.gamma[o] * (row[o] - mean) / (var + self.eps).sqrt() + blk.beta[o];
                    pattern.push(v > 0.0);
                    row[o] = v.max(0.0);
                }
            }
            h = pre;
        }
        let logits = h
            .iter()
            .map(|row| {
                (0..self.head_b.len())
                    .map(|c| self.head_b[c] + row.iter().zip(&self.head_w[c]).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect();
        (logits, pattern)
    }

    pub fn loss(&self, x: &[Vec<f64>], y: &[usize], train: bool) -> (f64, Vec<bool>) {
        let (logits, pattern) = self.forward(x, train);
        let mut total = 0.0;
        for (row, &label) in logits.iter().zip(y) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        (total / x.len() as f64, pattern)
    }

    /// Mutable access to the scalar behind flat layout position `(entry, k)`.
    pub fn param_mut(&mut self, name: &str, k: usize) -> &mut f64 {
        if let Some(rest) = name.strip_prefix("head.") {
            return match rest {
                "weight" => {
                    let cols = self.head_w[0].len();
                    &mut self.head_w[k / cols][k % cols]
                }
                _ => &mut self.head_b[k],
            };
        }
        let idx: usize = name["block".len()..name.find('.').unwrap()].parse().unwrap();
        let blk = &mut self.blocks[idx];
        match name.rsplit('.').next().unwrap() {
            "weight" => {
                let cols = blk.w[0].len();
                &mut blk.w[k / cols][k % cols]
            }
            "bias" => &mut blk.b[k],
            "gamma" => &mut blk.gamma[k],
            "beta" => &mut blk.beta[k],
            other => panic!("not a parameter: {other}"),
        }
    }
}

pub fn random_case(seed: u64, hidden: &[usize], rows: usize) -> (BnMlp, Tensor2, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let classes = 4;
    let mut model = BnMlp::new(d, hidden, classes, &mut rng).unwrap();
    // move BN away from the identity so every term in the chain rule matters
    let mut p = model.to_params();
    for e in model.layout().entries().to_vec() {
        let vals = &mut p.values_mut()[e.offset..e.offset + e.len];
        match e.kind {
            ParamKind::BnGamma => vals.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5)),
            ParamKind::BnBeta => vals.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3)),
            ParamKind::BnRunningMean => vals.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2)),
            ParamKind::BnRunningVar => vals.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0)),
            _ => {}
        }
    }
    model.load_params(&p).unwrap();
    let x: Vec<f32> = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (model, Tensor2::from_vec(rows, d, x).unwrap(), y)
}

pub fn rows64(x: &Tensor2) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|&v| v as f64).collect())
        .collect()
}

/// Max relative error between the analytic gradient and central differences
/// with step `h = 1e-3`, using the fourth-order central stencil
/// `(−f(+2h) + 8f(+h) − 8f(−h) + f(−2h)) / 12h` so the oracle's own truncation
/// error stays far below the tolerance.
///
/// Skipped: buffers and frozen BN parameters (no gradient by contract), entries
/// whose perturbation moves a ReLU input across zero (the loss has a kink
/// there), and entries where both values are below 1e-8.
pub fn max_fd_error(model: &BnMlp, x: &Tensor2, y: &[usize], train: bool) -> (f64, usize) {
    let (_, grads) = model.loss_and_grad(x, y).unwrap();
    let base = RefNet::from_model(model);
    let xs = rows64(x);
    let h = 1e-3;
    let frozen = model.bn_frozen();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for e in model.layout().entries() {
        if e.kind.is_buffer() || (frozen && e.kind.is_bn()) {
            continue;
        }
        for k in 0..e.len {
            let eval = |step: f64| {
                let mut net = base.clone();
                *net.param_mut(&e.name, k) += step;
                net.loss(&xs, y, train)
            };
            let (l2p, p2p) = eval(2.0 * h);
            let (l1p, p1p) = eval(h);
            let (l1m, p1m) = eval(-h);
            let (l2m, p2m) = eval(-2.0 * h);
            if p2p != p1p || p1p != p1m || p1m != p2m {
                continue;
            }
            let numeric = (-l2p + 8.0 * l1p - 8.0 * l1m + l2m) / (12.0 * h);
            let analytic = grads.values()[e.offset + k] as f64;
            if numeric.abs() < 1e-8 && analytic.abs() < 1e-8 {
                continue;
            }
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs());
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}
/// Short GA run for tests that only need distinct codes.
pub fn quick_ga(seed: u64) -> GaParams {
    GaParams {
        generations: 20,
        seed,
        ..GaParams::default()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `min ½‖h − g‖²  s.t. ⟨h, m⟩ ≥ 0` by projected gradient ascent on
/// the dual variable `μ ≥ 0`, with `h(μ) = g + μ·m`.
pub fn qp_oracle(g: &[f64], m: &[f64]) -> Vec<f64> {
    let mm = dot(m, m);
    let step = 0.5 / mm;
    let mut mu = 0.0f64;
    for _ in 0..200 {
        let h: Vec<f64> = g.iter().zip(m).map(|(a, b)| a + mu * b).collect();
        mu = (mu - step * dot(&h, m)).max(0.0);
    }
    g.iter().zip(m).map(|(a, b)| a + mu * b).collect()
}
pub fn key_matrix(key: &Tensor2) -> DMatrix<f64> {
    DMatrix::from_fn(key.rows(), key.cols(), |r, c| key.get(r, c) as f64)
}

/// Minimum-norm `W` with `Aᵢᵀ·W = targetᵢ` for every `(Aᵢ, targetᵢ)` pair,
/// solving the stacked system `[A₁ … A_p]ᵀ W = [t₁; …; t_p]`.
pub fn least_squares_scales(constraints: &[(&Tensor2, Vec<f64>)]) -> Vec<f32> {
    let stacked: Vec<DMatrix<f64>> = constraints.iter().map(|(k, _)| key_matrix(k).transpose()).collect();
    let rows: usize = stacked.iter().map(|s| s.nrows()).sum();
    let m = stacked[0].ncols();
    let mut a = DMatrix::zeros(rows, m);
    let mut t = DVector::zeros(rows);
    let mut at = 0;
    for (block, (_, target)) in stacked.iter().zip(constraints) {
        a.view_mut((at, 0), (block.nrows(), m)).copy_from(block);
        for (j, &v) in target.iter().enumerate() {
            t[at + j] = v;
        }
        at += block.nrows();
    }
    // W = Aᵀ (A Aᵀ)⁻¹ t
    let gram = &a * a.transpose();
    let y = gram.cholesky().expect("independent constraints").solve(&t);
    (a.transpose() * y).iter().map(|&v| v as f32).collect()
}
/// Scales carrying client 0's code with `d` bits barely flipped and client
/// 1's code with `d` bits flipped by a wide margin: both sit at Hamming
/// distance `d`, yet FSS still singles out client 0.
pub fn hamming_tie_instance() -> (Vec<f32>, Vec<FingerprintRecord>) {
    let n = 32;
    let records = gen(2, n, 128, 0.1, &quick_ga(7), 8).unwrap();
    let delta = records[0].delta as f64;
    let d = 6;
    let target = |r: &FingerprintRecord, flipped: f64| -> Vec<f64> {
        r.code
            .iter()
            .enumerate()
            .map(|(j, &f)| if j < d { flipped * f as f64 } else { 2.0 * delta * f as f64 })
            .collect()
    };
    let w = least_squares_scales(&[
        (&records[0].key, target(&records[0], -0.1 * delta)),
        (&records[1].key, target(&records[1], -5.0 * delta)),
    ]);
    (w, records)
}
/// Best achievable minimum distance for `k` codes of `n` bits, by enumerating
/// every multiset of codewords.
pub fn exhaustive_optimum(k: usize, n: usize) -> usize {
    pub fn rec(start: u32, chosen: &mut Vec<u32>, k: usize, n: usize, current: usize, best: &mut usize) {
        if chosen.len() == k {
            *best = (*best).max(current);
            return;
        }
        for w in start..(1u32 << n) {
            let d = chosen.iter().map(|&c| (c ^ w).count_ones() as usize).min().unwrap_or(usize::MAX);
            let next = current.min(d);
            if next <= *best {
                continue;
            }
            chosen.push(w);
            rec(w, chosen, k, n, next, best);
            chosen.pop();
        }
    }
    let mut best = 0;
    rec(0, &mut Vec::new(), k, n, usize::MAX, &mut best);
    best
}
pub fn best_random(k: usize, n: usize, draws: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            let codes: Vec<Code> = random_codes(k, n, &mut rng);
            min_pairwise_distance(&codes).unwrap().unwrap()
        })
        .max()
        .unwrap()
}
