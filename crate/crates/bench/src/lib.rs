//! Fixtures shared by the criterion benches.

use ltood_core::data::Benchmark;
use ltood_core::rng::stream;
use ltood_core::{BenchmarkConfig, ClassProfile, Tensor};
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, 0);
    let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, v).expect("finite values")
}

/// Scores with a shared range so the ranking work is not trivially sorted.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 1);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Labels for a batch, with every class present when `b >= classes`.
pub fn batch_labels(b: usize, classes: usize) -> Vec<usize> {
    (0..b).map(|i| i % classes).collect()
}

pub fn profile(classes: usize) -> ClassProfile {
    let counts = ltood_core::data::longtail_counts(classes, 500, 100.0).expect("valid profile");
    ClassProfile::new(counts, 0.6).expect("valid profile")
}

/// A benchmark small enough to train one epoch inside a bench iteration.
pub fn small_benchmark() -> Benchmark {
    BenchmarkConfig {
        n_max: 120,
        aux_per_kind: 300,
        ood_test_size: 200,
        test_per_class: 20,
        ..BenchmarkConfig::default()
    }
    .generate()
    .expect("valid benchmark")
}
