use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};

/// Disjoint per-client index lists over a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Per-client class histograms.
    pub fn class_counts(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| {
                let mut counts = vec![0; dataset.class_count];
                for &i in idx {
                    counts[dataset.labels[i]] += 1;
                }
                counts
            })
            .collect()
    }
}

/// Shuffles all indices and deals them into `clients` shards whose sizes
/// differ by at most one.
pub fn partition_iid(dataset: &Dataset, clients: usize, seed: u64) -> Result<Partition> {
    let n = dataset.len();
    if clients == 0 || n < clients {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / clients;
    let extra = n % clients;
    let mut out = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = base + usize::from(c < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { client_indices: out })
}

/// Label-skewed split: for every class, client shares are drawn from
/// `Dirichlet(xi · 1)`. Clients left empty take one sample from the currently
/// largest client.
pub fn partition_dirichlet(dataset: &Dataset, clients: usize, xi: f64, seed: u64) -> Result<Partition> {
    let n = dataset.len();
    if clients == 0 || n < clients {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidArgument(format!("concentration {xi} must be positive")));
    }
    let gamma = Gamma::new(xi, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            weights.fill(1.0 / clients as f64);
        }
        let m = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, w) in weights.iter().enumerate() {
            cum += w;
            let end = if c + 1 == clients {
                m
            } else {
                ((cum * m as f64).round() as usize).clamp(start, m)
            };
            out[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = out.iter().position(Vec::is_empty) {
        let donor = (0..clients)
            .max_by_key(|&c| (out[c].len(), std::cmp::Reverse(c)))
            .expect("clients >= 1");
        let moved = out[donor].pop().expect("n >= clients keeps a donor non-empty");
        out[empty].push(moved);
    }
    Ok(Partition { client_indices: out })
}
