#![allow(dead_code)]

pub mod grad;
pub mod oracles;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use simfuse::structure::DataMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((n, d), || normal.sample(rng))
}

pub fn data(n: usize, d: usize, seed: u64) -> DataMatrix {
    DataMatrix::new(gaussian(n, d, &mut rng(seed))).unwrap()
}

/// `per_cluster` points around each of `centers`, isotropic noise `spread`.
pub fn blobs(centers: &[Vec<f64>], per_cluster: usize, spread: f64, seed: u64) -> (DataMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            rows.push(center.iter().map(|m| m + normal.sample(&mut r)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    (DataMatrix::from_rows(&rows).unwrap(), labels)
}

/// Two blobs in `d` dimensions, centres `separation` apart on the first axis.
pub fn two_blobs(n: usize, d: usize, separation: f64, seed: u64) -> (DataMatrix, Vec<usize>) {
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    a[0] = -separation / 2.0;
    b[0] = separation / 2.0;
    blobs(&[a, b], n / 2, 1.0, seed)
}

/// Random matrix with entries in `(lo, hi)`, zero diagonal.
pub fn random_similarity(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { r.random_range(lo..hi) })
}
