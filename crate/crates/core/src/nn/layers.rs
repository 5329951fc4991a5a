use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Tensor2};

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weight: Tensor2,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    /// Uniform init in `±1/sqrt(fan_in)` for both weights and bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor2::from_vec(fan_out, fan_in, weight).expect("sized above"),
            bias,
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }
}

/// Batch normalization over the feature axis: `γ (x − μ)/√(σ² + ε) + β`.
///
/// Running statistics follow `r ← momentum·r + (1 − momentum)·batch`, with the
/// biased batch variance for both normalization and the running estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    pub momentum: f32,
    /// Frozen layers normalize with running statistics, receive zero
    /// gradients and never update their statistics.
    pub frozen: bool,
}

pub(crate) struct BnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
    /// `(mean, var)` when the batch statistics were used.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNormLayer {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            frozen: false,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn forward(&self, x: &Mat, use_batch: bool) -> (Mat, BnCache) {
        let (n, w) = (x.rows, x.cols);
        let (mean, var) = if use_batch {
            let mut mean = vec![0.0f64; w];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; w];
            for r in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (
                self.running_mean.iter().map(|&m| m as f64).collect(),
                self.running_var.iter().map(|&v| v as f64).collect(),
            )
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon as f64).sqrt())
            .collect();
        let mut xhat = Mat::zeros(n, w);
        let mut out = Mat::zeros(n, w);
        for r in 0..n {
            let xr = x.row(r);
            for j in 0..w {
                let h = (xr[j] - mean[j]) * inv_std[j];
                xhat.data[r * w + j] = h;
                out.data[r * w + j] = self.gamma[j] as f64 * h + self.beta[j] as f64;
            }
        }
        let batch_stats = use_batch.then_some((mean, var));
        (
            out,
            BnCache {
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b as f32;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b as f32;
        }
    }

    /// Returns `(dgamma, dbeta, dx)`.
    pub(crate) fn backward(&self, cache: &BnCache, dout: &Mat) -> (Vec<f64>, Vec<f64>, Mat) {
        let (n, w) = (dout.rows, dout.cols);
        let mut dgamma = vec![0.0f64; w];
        let mut dbeta = vec![0.0f64; w];
        for r in 0..n {
            let dr = dout.row(r);
            let hr = cache.xhat.row(r);
            for j in 0..w {
                dgamma[j] += dr[j] * hr[j];
                dbeta[j] += dr[j];
            }
        }
        let mut dx = Mat::zeros(n, w);
        if cache.batch_stats.is_some() {
            // dxhat = dout·γ; dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
            let nf = n as f64;
            for r in 0..n {
                let dr = dout.row(r);
                let hr = cache.xhat.row(r);
                for j in 0..w {
                    let g = self.gamma[j] as f64;
                    dx.data[r * w + j] = cache.inv_std[j] / nf
                        * (nf * dr[j] * g - dbeta[j] * g - hr[j] * dgamma[j] * g);
                }
            }
        } else {
            for r in 0..n {
                let dr = dout.row(r);
                for j in 0..w {
                    dx.data[r * w + j] = dr[j] * self.gamma[j] as f64 * cache.inv_std[j];
                }
            }
        }
        if self.frozen {
            return (vec![0.0; w], vec![0.0; w], dx);
        }
        (dgamma, dbeta, dx)
    }
}
