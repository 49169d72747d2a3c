//! Random instance generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use score_kit::{CalibSample, TestPoint};

/// `n` calibration samples and `m` test points with uniform scores and risks.
pub fn random_instance(n: usize, m: usize, seed: u64) -> (Vec<CalibSample>, Vec<TestPoint>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calib = (0..n)
        .map(|_| {
            let s: f64 = rng.random();
            CalibSample::new(s, (s + rng.random::<f64>()) / 2.0)
        })
        .collect();
    let tests = (0..m).map(|_| TestPoint::new(rng.random())).collect();
    (calib, tests)
}
