//! Fingerprint code design: a genetic algorithm that searches for `K` binary
//! codes of length `N` with a large minimum pairwise Hamming distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fingerprint code with entries in `{−1, +1}`.
pub type Code = Vec<i8>;

/// Number of positions where two codes differ.
pub fn hamming(a: &[i8], b: &[i8]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("codes of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Smallest Hamming distance over all pairs, `None` for fewer than two codes.
pub fn min_pairwise_distance(codes: &[Code]) -> Result<Option<usize>> {
    let mut best = None;
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d = hamming(&codes[i], &codes[j])?;
            best = Some(best.map_or(d, |b: usize| b.min(d)));
        }
    }
    Ok(best)
}

/// Renders a code as a `+`/`-` string.
pub fn code_to_string(code: &[i8]) -> String {
    code.iter().map(|&b| if b > 0 { '+' } else { '-' }).collect()
}

pub fn code_from_str(s: &str) -> Result<Code> {
    s.chars()
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            other => Err(Error::InvalidArgument(format!("bad code character {other:?}"))),
        })
        .collect()
}

/// Uniformly random codes, used as the GA's starting population and as a
/// baseline to compare against.
pub fn random_codes<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Vec<Code> {
    (0..k)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    /// Per-bit flip probability; `None` means `1/(K·N)`.
    #[serde(default)]
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
    pub tournament_k: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 200,
            mutation_rate: None,
            crossover_rate: 0.9,
            tournament_k: 3,
            seed: 0,
        }
    }
}

/// A whole code set packed into 64-bit words, one row of words per code.
#[derive(Clone)]
struct Individual {
    words: Vec<u64>,
}

/// `(min distance, −(pairs at that distance))`; larger is better.
type Fitness = (usize, i64);

struct Packing {
    k: usize,
    n: usize,
    words_per_code: usize,
}

impl Packing {
    fn code<'a>(&self, ind: &'a Individual, i: usize) -> &'a [u64] {
        &ind.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    fn fitness(&self, ind: &Individual) -> Fitness {
        let mut min = usize::MAX;
        let mut at_min = 0i64;
        for i in 0..self.k {
            let a = self.code(ind, i);
            for j in i + 1..self.k {
                let d: usize = a
                    .iter()
                    .zip(self.code(ind, j))
                    .map(|(x, y)| (x ^ y).count_ones() as usize)
                    .sum();
                match d.cmp(&min) {
                    std::cmp::Ordering::Less => {
                        min = d;
                        at_min = 1;
                    }
                    std::cmp::Ordering::Equal => at_min += 1,
                    std::cmp::Ordering::Greater => {}
                }
            }
        }
        (min, -at_min)
    }

    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Individual {
        let mut words = vec![0u64; self.k * self.words_per_code];
        for i in 0..self.k {
            for b in 0..self.n {
                if rng.random::<bool>() {
                    words[i * self.words_per_code + b / 64] |= 1 << (b % 64);
                }
            }
        }
        Individual { words }
    }

    fn decode(&self, ind: &Individual) -> Vec<Code> {
        (0..self.k)
            .map(|i| {
                let c = self.code(ind, i);
                (0..self.n)
                    .map(|b| if c[b / 64] >> (b % 64) & 1 == 1 { 1 } else { -1 })
                    .collect()
            })
            .collect()
    }
}

/// Searches for `k` codes of `n` bits maximizing the minimum pairwise Hamming
/// distance. Ties on the minimum are broken by preferring fewer pairs at that
/// distance, which gives selection a gradient between plateaus.
///
/// Each individual is a complete code set. A generation keeps the best
/// individual, then fills the population with children of tournament-selected
/// parents: uniform crossover exchanges whole codes between the parents, and
/// each bit is then flipped with the mutation probability. The best
/// individual seen in any generation is returned.
pub fn generate_codes(k: usize, n: usize, params: &GaParams) -> Result<Vec<Code>> {
    if k < 2 || n == 0 {
        return Err(Error::InvalidArgument(format!("need K >= 2 and N >= 1, got K={k}, N={n}")));
    }
    if params.population < 2 || params.tournament_k == 0 {
        return Err(Error::InvalidArgument("GA population must be >= 2 and tournament >= 1".into()));
    }
    let mutation = params.mutation_rate.unwrap_or(1.0 / (k * n) as f64);
    if !(0.0..=1.0).contains(&mutation) || !(0.0..=1.0).contains(&params.crossover_rate) {
        return Err(Error::InvalidArgument("GA rates must lie in [0, 1]".into()));
    }
    let packing = Packing {
        k,
        n,
        words_per_code: n.div_ceil(64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pop: Vec<Individual> = (0..params.population).map(|_| packing.random(&mut rng)).collect();
    let mut fit: Vec<Fitness> = pop.iter().map(|p| packing.fitness(p)).collect();
    let mut best_idx = argmax(&fit);
    let mut best = (pop[best_idx].clone(), fit[best_idx]);

    for _ in 0..params.generations {
        let mut next = Vec::with_capacity(params.population);
        next.push(pop[best_idx].clone());
        while next.len() < params.population {
            let a = tournament(&fit, params.tournament_k, &mut rng);
            let b = tournament(&fit, params.tournament_k, &mut rng);
            let mut child = pop[a].clone();
            if rng.random_bool(params.crossover_rate) {
                for i in 0..k {
                    if rng.random::<bool>() {
                        let range = i * packing.words_per_code..(i + 1) * packing.words_per_code;
                        child.words[range.clone()].copy_from_slice(&pop[b].words[range]);
                    }
                }
            }
            if mutation > 0.0 {
                for i in 0..k {
                    for bit in 0..n {
                        if rng.random_bool(mutation) {
                            child.words[i * packing.words_per_code + bit / 64] ^= 1 << (bit % 64);
                        }
                    }
                }
            }
            next.push(child);
        }
        pop = next;
        fit = pop.iter().map(|p| packing.fitness(p)).collect();
        best_idx = argmax(&fit);
        if fit[best_idx] > best.1 {
            best = (pop[best_idx].clone(), fit[best_idx]);
        }
    }
    Ok(packing.decode(&best.0))
}

fn argmax(fit: &[Fitness]) -> usize {
    let mut best = 0;
    for (i, f) in fit.iter().enumerate() {
        if *f > fit[best] {
            best = i;
        }
    }
    best
}

fn tournament<R: Rng + ?Sized>(fit: &[Fitness], k: usize, rng: &mut R) -> usize {
    let mut winner = rng.random_range(0..fit.len());
    for _ in 1..k {
        let c = rng.random_range(0..fit.len());
        if fit[c] > fit[winner] {
            winner = c;
        }
    }
    winner
}
