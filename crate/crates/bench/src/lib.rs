//! Shared fixtures for the criterion benches.

use embcomp::{DenseMatrix, FeatureSpace, SyntheticSpec};
use rand::Rng;

pub const DIM: usize = 16;
pub const BATCH: usize = 1024;

/// Feature space with the default synthetic cardinalities.
pub fn default_space() -> FeatureSpace {
    FeatureSpace::new(SyntheticSpec::default().cardinalities).expect("default cardinalities are valid")
}

/// Uniform ids in `0..n`.
pub fn random_ids(n: usize, count: usize, seed: u64) -> Vec<u32> {
    let mut rng = embcomp::rng::seeded(seed, 0);
    (0..count).map(|_| rng.random_range(0..n as u32)).collect()
}

/// Uniform matrix in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f32> {
    let mut rng = embcomp::rng::seeded(seed, 1);
    let values = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, values).expect("shape matches")
}
