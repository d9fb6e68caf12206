//! Shared fixtures for the estimator benches.

use std::sync::Arc;

use isolab_core::{draw, Family, MeasureModel, SampleBatch, Seed};

pub const SEED: u64 = 0x5eed;

/// A measure of the given family and a fixed batch drawn from it.
pub fn fixture(family: Family, n: usize, count: usize) -> (MeasureModel, Arc<SampleBatch>) {
    let m = family.build(n).expect("family");
    let batch = draw(&m, count, Seed::new(SEED)).expect("draw");
    (m, Arc::new(batch))
}

/// The first coordinate axis in `R^n`.
pub fn axis(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    v
}
