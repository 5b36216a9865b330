use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Gaussian clusters around per-class means drawn uniformly in
/// `[0.1, 0.9]^input_dim`; samples are clamped to `[0, 1]`.
///
/// Samples are ordered class by class.
pub fn synthetic_blobs(
    n_per_class: usize,
    num_classes: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_class == 0 || num_classes == 0 || input_dim == 0 {
        return Err(Error::Config("synthetic blob counts must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be non-negative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..input_dim).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(n_per_class * num_classes * input_dim);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                let v = if spread == 0.0 {
                    m
                } else {
                    m + spread * noise.sample(&mut rng)
                };
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let features = Tensor::matrix(labels.len(), input_dim, data)?;
    LabeledDataset::new(features, labels, num_classes)
}
