//! Marginal deployment risk (MDR): per-test-point e-values and trust
//! decisions.
//!
//! For a single test point with score `s` the e-value is
//!
//! ```text
//! E = inf_{l in [0,1]} W * 1{s <= t(l)} / (sum_i w_i L_i 1{s_i <= t(l)} + w * l * 1{s <= t(l)})
//! t(l) = max { t in M : F(t; l) <= gamma }
//! F(t; l) = (sum_i w_i L_i 1{s_i <= t} + w * l * 1{s <= t}) / W
//! ```
//!
//! where `M` pools calibration and test scores, `w` is the test weight and
//! `W` the total weight (`n + 1` when unweighted). Deploying when
//! `E >= 1/alpha` controls `E[L * psi] <= alpha`.
//!
//! Two independent routes are provided:
//!
//! * [`mdr_decide`] / [`weighted_mdr_decide`] evaluate the closed-form
//!   decision rule directly from a single cumulative risk statistic, never
//!   materialising `E`.
//! * [`mdr_evalue_oracle`] / [`weighted_mdr_evalue_oracle`] evaluate the
//!   infimum over a uniform grid of candidate risks `l` (plus `{0, 1}`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::types::{
    check_alpha, check_gamma, validate_calib, validate_test_point, within_budget, CalibSample,
    EValue, Levels, TestPoint,
};

/// Default number of uniformly spaced candidate risks used by the oracles.
pub const DEFAULT_ELL_GRID: usize = 1001;

/// Deploy/abstain outcome for one test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdrDecision {
    pub deploy: bool,
    /// `(w + sum_i w_i L_i 1{s_i <= s}) / W`; the decision for `gamma <= alpha`
    /// is exactly `empirical_stat <= gamma`.
    pub empirical_stat: f64,
    /// A certified lower bound on the e-value when deployed
    /// (`1 / min(gamma, alpha)`), zero otherwise. Diagnostic only.
    pub evalue_lower_bound: f64,
}

/// Unweighted decision. Calibration weights are ignored.
pub fn mdr_decide(calib: &[CalibSample], test_score: f64, levels: Levels) -> Result<MdrDecision> {
    decide(
        calib,
        TestPoint::new(test_score),
        levels.gamma(),
        levels.alpha(),
        false,
    )
}

/// Decision under covariate shift with the weights carried by the records.
pub fn weighted_mdr_decide(
    calib: &[CalibSample],
    test: TestPoint,
    levels: Levels,
) -> Result<MdrDecision> {
    decide(calib, test, levels.gamma(), levels.alpha(), true)
}

/// Decision after dividing the e-value by a boosting draw `xi`, i.e.
/// `1{E >= xi / alpha}`. For `gamma = alpha` this never differs from the
/// unboosted decision.
pub fn boosted_mdr_decide(
    calib: &[CalibSample],
    test: TestPoint,
    levels: Levels,
    xi: f64,
    weighted: bool,
) -> Result<MdrDecision> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(ScoreError::InvalidDraws);
    }
    decide(calib, test, levels.gamma(), levels.alpha() / xi, weighted)
}

fn decide(
    calib: &[CalibSample],
    test: TestPoint,
    gamma: f64,
    alpha: f64,
    weighted: bool,
) -> Result<MdrDecision> {
    validate_calib(calib)?;
    validate_test_point(calib.len(), &test)?;
    let test_w = if weighted { test.weight } else { 1.0 };
    let weight_of = |c: &CalibSample| if weighted { c.weight } else { 1.0 };

    let total: f64 = calib.iter().map(weight_of).sum::<f64>() + test_w;
    let below: f64 = calib
        .iter()
        .filter(|c| c.score <= test.score)
        .map(|c| weight_of(c) * c.risk)
        .sum();
    let stat = (test_w + below) / total;

    let mut deploy = within_budget(stat, gamma);
    if deploy && gamma > alpha {
        // No cutoff in M may carry an estimate inside (alpha, gamma] for any
        // candidate risk; the estimate is affine in l, so its range over
        // [0, 1] is an interval with computable endpoints.
        let mut pooled: Vec<(f64, f64)> = calib
            .iter()
            .map(|c| (c.score, weight_of(c) * c.risk))
            .collect();
        pooled.push((test.score, 0.0));
        pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut k = 0;
        while k < pooled.len() {
            let t = pooled[k].0;
            while k < pooled.len() && pooled[k].0 == t {
                acc += pooled[k].1;
                k += 1;
            }
            let lo = acc / total;
            let hi = if test.score <= t {
                (acc + test_w) / total
            } else {
                lo
            };
            let clear = within_budget(hi, alpha) || !within_budget(lo, gamma);
            if !clear {
                deploy = false;
                break;
            }
        }
    }
    let evalue_lower_bound = if deploy { 1.0 / gamma.min(alpha) } else { 0.0 };
    Ok(MdrDecision {
        deploy,
        empirical_stat: stat,
        evalue_lower_bound,
    })
}

/// Grid evaluation of the unweighted e-value.
pub fn mdr_evalue_oracle(
    calib: &[CalibSample],
    test_score: f64,
    gamma: f64,
    ell_grid_size: usize,
) -> Result<EValue> {
    let ells = uniform_ell_grid(ell_grid_size)?;
    oracle(calib, TestPoint::new(test_score), gamma, &ells, false)
}

/// Grid evaluation of the weighted e-value.
pub fn weighted_mdr_evalue_oracle(
    calib: &[CalibSample],
    test: TestPoint,
    gamma: f64,
    ell_grid_size: usize,
) -> Result<EValue> {
    let ells = uniform_ell_grid(ell_grid_size)?;
    oracle(calib, test, gamma, &ells, true)
}

/// The e-value with the infimum restricted to an explicit set of candidate
/// risks, e.g. the attainable values `{0, c}` of a scaled binary risk.
pub fn mdr_evalue_on_ells(
    calib: &[CalibSample],
    test: TestPoint,
    gamma: f64,
    ells: &[f64],
    weighted: bool,
) -> Result<EValue> {
    if ells.is_empty() || ells.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(ScoreError::InvalidConfig(
            "candidate risks must be a non-empty subset of [0, 1]".into(),
        ));
    }
    oracle(calib, test, gamma, ells, weighted)
}

/// `size` evenly spaced points on `[0, 1]`, endpoints included.
pub fn uniform_ell_grid(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(ScoreError::InvalidGrid(size));
    }
    let last = (size - 1) as f64;
    let mut grid: Vec<f64> = (0..size).map(|k| k as f64 / last).collect();
    grid[size - 1] = 1.0;
    Ok(grid)
}

fn oracle(
    calib: &[CalibSample],
    test: TestPoint,
    gamma: f64,
    ells: &[f64],
    weighted: bool,
) -> Result<EValue> {
    validate_calib(calib)?;
    validate_test_point(calib.len(), &test)?;
    check_gamma(gamma)?;
    let test_w = if weighted { test.weight } else { 1.0 };
    let weight_of = |c: &CalibSample| if weighted { c.weight } else { 1.0 };
    let total: f64 = calib.iter().map(weight_of).sum::<f64>() + test_w;

    // Distinct pooled cutoffs with the cumulative weighted calibration risk.
    let mut order: Vec<usize> = (0..calib.len()).collect();
    order.sort_by(|&a, &b| calib[a].score.total_cmp(&calib[b].score));
    let mut cutoffs: Vec<(f64, f64)> = Vec::with_capacity(calib.len() + 1);
    let mut scores: Vec<f64> = calib.iter().map(|c| c.score).collect();
    scores.push(test.score);
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut acc = 0.0;
    let mut k = 0;
    for &t in &scores {
        while k < order.len() && calib[order[k]].score <= t {
            acc += weight_of(&calib[order[k]]) * calib[order[k]].risk;
            k += 1;
        }
        cutoffs.push((t, acc));
    }

    let mut best = EValue::INFINITY;
    for &ell in ells {
        let feasible = cutoffs.iter().rev().find(|&&(t, a)| {
            let own = if test.score <= t { test_w * ell } else { 0.0 };
            within_budget((a + own) / total, gamma)
        });
        let value = match feasible {
            Some(&(t, a)) if test.score <= t => EValue::ratio(total, a + test_w * ell),
            _ => EValue::ZERO,
        };
        if value < best {
            best = value;
        }
        if best == EValue::ZERO {
            break;
        }
    }
    Ok(best)
}

/// Checks `alpha` up front for callers that threshold oracle output.
pub fn oracle_decision(evalue: EValue, alpha: f64) -> Result<bool> {
    check_alpha(alpha)?;
    Ok(within_budget(1.0 / alpha, evalue.get()))
}
