use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Per-coordinate standard deviation of every blob.
pub const SYNTHETIC_NOISE: f64 = 0.1;

/// `classes` isotropic Gaussian blobs centred at `0.5 + μ_c` with
/// `‖μ_c‖ = separation`, clipped to `[0, 1]`. Train and test each hold
/// `per_class` samples of every class, shuffled.
pub fn synthetic_dataset(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config("synthetic dataset needs classes, per_class and dim >= 1".into()));
    }
    let mut rng = seed::rng(seed, &[0x5e_17]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter().map(|v| 0.5 + separation * v / norm).collect()
        })
        .collect();

    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut order: Vec<usize> = (0..classes * per_class).map(|i| i / per_class).collect();
        order.shuffle(rng);
        let mut features = Array2::zeros((order.len(), dim));
        for (row, &c) in order.iter().enumerate() {
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(rng);
                features[[row, j]] = (means[c][j] + SYNTHETIC_NOISE * noise).clamp(0.0, 1.0);
            }
        }
        Split { features, labels: order }
    };
    let train = draw(&mut rng);
    let test = draw(&mut rng);
    Dataset::new(format!("synthetic-c{classes}-n{per_class}-d{dim}-s{separation}"), train, test, classes)
}
