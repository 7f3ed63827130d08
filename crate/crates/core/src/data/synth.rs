//! Gaussian-blob classification data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::DataError;
use crate::scalar::Scalar;

/// Unit-covariance Gaussian blobs, `samples_per_class` per class, stored class by class.
///
/// Class means sit on a scaled simplex with pairwise distance `class_separation`:
/// `(s / sqrt 2) e_k` when `input_dim >= num_classes`, or `-s/2, +s/2` on the
/// first axis for two classes in fewer dimensions.
pub fn synth_generate<T: Scalar>(
    num_classes: usize,
    input_dim: usize,
    samples_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if num_classes == 0 || input_dim == 0 || samples_per_class == 0 {
        return Err(DataError::Config("synthetic counts must be >= 1".into()));
    }
    if !(class_separation.is_finite() && class_separation >= 0.0) {
        return Err(DataError::Config("class separation must be finite and >= 0".into()));
    }
    let mean = |k: usize, j: usize| -> f64 {
        if input_dim >= num_classes {
            if j == k {
                class_separation / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if j == 0 {
            class_separation * (k as f64 - 0.5)
        } else {
            0.0
        }
    };
    if input_dim < num_classes && num_classes != 2 {
        return Err(DataError::Config(format!(
            "input_dim {input_dim} too small for {num_classes} simplex means"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        for _ in 0..samples_per_class {
            for j in 0..input_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(T::lit(mean(k, j) + z));
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, input_dim, num_classes)
}
