use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Isotropic Gaussian blobs, one per entry of `class_means`, clamped to
/// [0, 1]. Samples are emitted class by class.
pub fn synth_gaussians(
    seed: u64,
    samples_per_class: usize,
    dims: usize,
    class_means: &[Vec<f64>],
    sigma: f64,
) -> Result<Dataset> {
    if class_means.is_empty() {
        return Err(Error::invalid("at least one class mean is required"));
    }
    if let Some(m) = class_means.iter().find(|m| m.len() != dims) {
        return Err(Error::dim("class mean", dims, m.len()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = samples_per_class * class_means.len();
    let mut data = Vec::with_capacity(rows * dims);
    let mut labels = Vec::with_capacity(rows);
    for (class, mean) in class_means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &mu in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((mu + sigma * z).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(rows, dims, data)?, labels, class_means.len())
}

/// Two class means around 0.5: coordinate 0 is shifted by `±strong`, every
/// other coordinate by `±weak`. With `weak` below the attack budget and
/// `strong` above it, the weak coordinates are predictive but not robust.
pub fn tradeoff_means(dims: usize, strong: f64, weak: f64) -> Vec<Vec<f64>> {
    let mean = |s: f64| {
        (0..dims)
            .map(|i| 0.5 + s * if i == 0 { strong } else { weak })
            .collect::<Vec<_>>()
    };
    vec![mean(-1.0), mean(1.0)]
}
