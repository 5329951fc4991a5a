use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Gaussian blobs: one mean per class drawn from `N(0, I)`, samples at
/// `mean + spread · N(0, I)`. Samples are stored class by class.
pub fn synth_blobs(seed: u64, classes: usize, dim: usize, per_class: usize, spread: f32) -> Result<Dataset> {
    synth_blobs_scaled(seed, classes, dim, per_class, spread, 1.0)
}

/// Like [`synth_blobs`] with class means drawn from `N(0, mean_scale²·I)`,
/// which sets how far apart the classes sit relative to `spread`.
pub fn synth_blobs_scaled(
    seed: u64,
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f32,
    mean_scale: f32,
) -> Result<Dataset> {
    if classes < 2 || per_class < 1 || dim < 1 || !(mean_scale >= 0.0 && mean_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "synth_blobs needs classes >= 2, per_class >= 1, dim >= 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| mean_scale * Distribution::<f32>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f32 = StandardNormal.sample(&mut rng);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    let features = Tensor2::from_vec(classes * per_class, dim, data)?;
    Dataset::new(features, labels, classes)
}
