#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use score_kit::simulate::{
    rejection_sample_shifted, risk_of, shift_weight, DgpSetting, RiskKind, Sample, ShiftModel,
};
use score_kit::{CalibSample, TestPoint};

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// A fixed score: the risk at the noiseless response plus a nuisance term,
/// so it depends on covariates only.
pub fn fixed_score(setting: &DgpSetting, risk: &RiskKind, x: &[f64]) -> f64 {
    let mu = setting.mean(x);
    risk_of(risk, mu, mu).get() + 0.1 * x[4]
}

pub fn risk_for(setting: &DgpSetting, risk: &RiskKind, p: &Sample) -> f64 {
    risk_of(risk, setting.mean(&p.x), p.y).get()
}

/// Scored calibration and test sets, with test data optionally shifted and
/// both sides carrying the true shift weights. Returns the test risks too.
pub fn scored_batch(
    setting: &DgpSetting,
    risk: &RiskKind,
    shift: &ShiftModel,
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<CalibSample>, Vec<TestPoint>, Vec<f64>) {
    let calib_data: Vec<Sample> = (0..n).map(|_| setting.draw(rng)).collect();
    let test_data: Vec<Sample> = match shift {
        ShiftModel::None => (0..m).map(|_| setting.draw(rng)).collect(),
        model => rejection_sample_shifted(setting, model, m, rng).unwrap(),
    };
    let weight = |x: &[f64]| match shift {
        ShiftModel::None => 1.0,
        model => shift_weight(model, x).unwrap(),
    };
    let calib = calib_data
        .iter()
        .map(|p| {
            CalibSample::weighted(
                fixed_score(setting, risk, &p.x),
                risk_for(setting, risk, p),
                weight(&p.x),
            )
        })
        .collect();
    let tests = test_data
        .iter()
        .map(|p| TestPoint::weighted(fixed_score(setting, risk, &p.x), weight(&p.x)))
        .collect();
    let risks = test_data
        .iter()
        .map(|p| risk_for(setting, risk, p))
        .collect();
    (calib, tests, risks)
}

/// Random small instance with ties, optional weights and mixed risk types.
pub fn small_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_m: usize,
    weighted: bool,
) -> (Vec<CalibSample>, Vec<TestPoint>) {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let levels = rng.random_range(3..20);
    let score = |rng: &mut ChaCha8Rng| rng.random_range(0..levels) as f64 / levels as f64;
    let weight = |rng: &mut ChaCha8Rng| {
        if weighted {
            rng.random_range(0.2..3.0)
        } else {
            1.0
        }
    };
    let calib = (0..n)
        .map(|_| {
            let s = score(rng);
            let r = if rng.random_bool(0.3) {
                rng.random_range(0..2) as f64
            } else {
                rng.random()
            };
            CalibSample::weighted(s, r, weight(rng))
        })
        .collect();
    let tests = (0..m)
        .map(|_| TestPoint::weighted(score(rng), weight(rng)))
        .collect();
    (calib, tests)
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    score_kit::simulate::mean_se(values)
}
