//! Domain types shared by every module: calibration and test records,
//! risk values, e-values, significance levels and batch validation.
//!
//! Scores are ordinary finite reals. Thresholds that may not exist are
//! carried as `Option<f64>`, with `None` standing for "no feasible cutoff".

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};

/// Relative slack used when checking an empirical risk estimate against its
/// budget. Only absorbs floating-point round-off between algebraically equal
/// expressions; it never admits a genuinely infeasible cutoff.
pub const BUDGET_TOL: f64 = 1e-12;

/// `value <= budget` up to [`BUDGET_TOL`].
#[inline]
pub fn within_budget(value: f64, budget: f64) -> bool {
    value <= budget + BUDGET_TOL * budget.abs().max(1.0)
}

/// A risk normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RiskValue(f64);

impl RiskValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ScoreError::OutOfRange {
                value,
                lo: 0.0,
                hi: 1.0,
            })
        }
    }

    /// Clamps into `[0, 1]`. NaN maps to 1 (the worst case).
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(1.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// One labeled calibration point reduced to its score, realized risk and
/// covariate-shift weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub score: f64,
    pub risk: f64,
    pub weight: f64,
}

impl CalibSample {
    pub fn new(score: f64, risk: f64) -> Self {
        Self {
            score,
            risk,
            weight: 1.0,
        }
    }

    pub fn weighted(score: f64, risk: f64, weight: f64) -> Self {
        Self {
            score,
            risk,
            weight,
        }
    }
}

/// One unlabeled test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub score: f64,
    pub weight: f64,
}

impl TestPoint {
    pub fn new(score: f64) -> Self {
        Self { score, weight: 1.0 }
    }

    pub fn weighted(score: f64, weight: f64) -> Self {
        Self { score, weight }
    }
}

/// Non-negative evidence that a test point's risk is small. `+inf` is legal.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EValue(f64);

impl EValue {
    pub const ZERO: EValue = EValue(0.0);
    pub const INFINITY: EValue = EValue(f64::INFINITY);

    /// Wraps a non-negative value; `+inf` is accepted, negatives and NaN are not.
    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(ScoreError::OutOfRange {
                value,
                lo: 0.0,
                hi: f64::INFINITY,
            })
        }
    }

    /// `numerator / denominator` with the convention `c / 0 = +inf` for
    /// `c > 0` and `0 / 0 = 0`.
    pub(crate) fn ratio(numerator: f64, denominator: f64) -> Self {
        debug_assert!(numerator >= 0.0 && denominator >= 0.0);
        if numerator == 0.0 {
            Self(0.0)
        } else if denominator == 0.0 {
            Self(f64::INFINITY)
        } else {
            Self(numerator / denominator)
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl From<EValue> for f64 {
    fn from(e: EValue) -> f64 {
        e.0
    }
}

/// Target level `alpha` and internal calibration level `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    alpha: f64,
    gamma: f64,
}

impl Levels {
    /// `gamma` defaults to `alpha`.
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_gamma(alpha, alpha)
    }

    pub fn with_gamma(alpha: f64, gamma: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_gamma(gamma)?;
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ScoreError::InvalidAlpha(alpha))
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(ScoreError::InvalidGamma(gamma))
    }
}

/// Affine map from an original risk scale `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRescaler {
    lo: f64,
    hi: f64,
}

impl RiskRescaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(ScoreError::InvalidRescaler { lo, hi })
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

pub fn rescale_risk(raw: f64, r: &RiskRescaler) -> Result<RiskValue> {
    if !(r.lo..=r.hi).contains(&raw) {
        return Err(ScoreError::OutOfRange {
            value: raw,
            lo: r.lo,
            hi: r.hi,
        });
    }
    Ok(RiskValue::clamped((raw - r.lo) / (r.hi - r.lo)))
}

pub fn unrescale_risk(v: RiskValue, r: &RiskRescaler) -> f64 {
    r.lo + v.get() * (r.hi - r.lo)
}

/// A calibration/test batch that passed [`validate_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    calib: Vec<CalibSample>,
    tests: Vec<TestPoint>,
}

impl Batch {
    pub fn calib(&self) -> &[CalibSample] {
        &self.calib
    }

    pub fn tests(&self) -> &[TestPoint] {
        &self.tests
    }

    pub fn into_parts(self) -> (Vec<CalibSample>, Vec<TestPoint>) {
        (self.calib, self.tests)
    }
}

/// Checks finiteness of scores, risk range and weight sign. Calibration
/// indices are reported first; test indices are offset by the calibration
/// size so every record has a unique position.
pub fn validate_batch(calib: &[CalibSample], tests: &[TestPoint]) -> Result<Batch> {
    validate_calib(calib)?;
    if tests.is_empty() {
        return Err(ScoreError::EmptyTest);
    }
    let n = calib.len();
    for (j, t) in tests.iter().enumerate() {
        check_point(n + j, t.score, t.weight)?;
    }
    Ok(Batch {
        calib: calib.to_vec(),
        tests: tests.to_vec(),
    })
}

pub(crate) fn validate_calib(calib: &[CalibSample]) -> Result<()> {
    if calib.is_empty() {
        return Err(ScoreError::EmptyCalibration);
    }
    for (i, c) in calib.iter().enumerate() {
        check_point(i, c.score, c.weight)?;
        if !(0.0..=1.0).contains(&c.risk) {
            return Err(ScoreError::RiskOutOfRange(i));
        }
    }
    Ok(())
}

pub(crate) fn validate_test_point(index: usize, t: &TestPoint) -> Result<()> {
    check_point(index, t.score, t.weight)
}

fn check_point(index: usize, score: f64, weight: f64) -> Result<()> {
    if !score.is_finite() {
        return Err(ScoreError::NonFiniteScore(index));
    }
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(ScoreError::NonPositiveWeight(index));
    }
    Ok(())
}
