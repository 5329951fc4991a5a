//! Fixtures for the benchmarks: the default network, a labeled batch and
//! fingerprint records sized to it.

use fedtracker::fingerprint::{gen, FingerprintRecord, GaParams};
use fedtracker::nn::{BnMlp, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUT: usize = 64;
pub const HIDDEN: [usize; 2] = [128, 128];
pub const CLASSES: usize = 10;

pub fn default_model(seed: u64) -> BnMlp {
    BnMlp::new(INPUT, &HIDDEN, CLASSES, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid shape")
}

pub fn batch(rows: usize, seed: u64) -> (Tensor2, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..rows * INPUT).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..rows).map(|_| rng.random_range(0..CLASSES)).collect();
    (Tensor2::from_vec(rows, INPUT, x).expect("valid shape"), y)
}

/// Records for `clients` clients with `bits`-bit codes, from a short code
/// search.
pub fn records(clients: usize, bits: usize, seed: u64) -> Vec<FingerprintRecord> {
    let ga = GaParams {
        generations: 10,
        seed,
        ..GaParams::default()
    };
    gen(clients, bits, HIDDEN.iter().sum(), 0.1, &ga, seed).expect("valid sizes")
}
