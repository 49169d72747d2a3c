//! Selective deployment risk (SDR): e-values for a batch of `m` test points,
//! meant to be fed to the eBH filter.
//!
//! For test point `j` with score `s_j` and weight `w_j`:
//!
//! ```text
//! E_j = inf_{l in [0,1]} W_j 1{s_j <= t_j(l)} / (w_j l 1{s_j <= t_j(l)} + sum_i w_i L_i 1{s_i <= t_j(l)})
//! t_j(l) = max { t in M : FR_j(t; l) <= gamma }
//! FR_j(t; l) = (w_j l 1{s_j <= t} + sum_i w_i L_i 1{s_i <= t}) / (1 + #{k != j : s_k <= t}) * m / W_j
//! ```
//!
//! with `W_j = w_j + sum_i w_i` and `M` the pooled calibration and test
//! scores. Unweighted e-values are the special case of unit weights.
//!
//! The fast path ([`sdr_evalues`], [`weighted_sdr_evalues`]) sorts the pooled
//! scores once, keeps cumulative risk and test counts per distinct score, and
//! resolves the infimum for each `j` in a single pass over the distinct
//! scores: on the set of `l` mapping to a fixed cutoff `t` the objective is
//! decreasing in `l`, so only the largest such `l`, `min(lbar(t), 1)`,
//! matters, and cutoffs dominated by a later feasible cutoff with a larger
//! `lbar` never attain the infimum.
//!
//! The oracles ([`sdr_evalues_oracle`], [`weighted_sdr_evalues_oracle`])
//! evaluate the objective literally at every candidate `l` (uniform grid,
//! both endpoints and every breakpoint), rebuilding every sum from scratch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::evalue_mdr::uniform_ell_grid;
use crate::types::{
    check_alpha, check_gamma, validate_batch, within_budget, CalibSample, EValue, TestPoint,
};

/// E-values for every test point plus the cutoffs at `l = 0` and `l = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrEvalueSet {
    pub evalues: Vec<EValue>,
    pub thresholds_at_0: Vec<Option<f64>>,
    pub thresholds_at_1: Vec<Option<f64>>,
}

impl SdrEvalueSet {
    pub fn len(&self) -> usize {
        self.evalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evalues.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.evalues.iter().map(|e| e.get()).collect()
    }
}

/// Unweighted e-values. Record weights are ignored.
pub fn sdr_evalues(calib: &[CalibSample], tests: &[TestPoint], gamma: f64) -> Result<SdrEvalueSet> {
    check_gamma(gamma)?;
    let batch = validate_batch(calib, tests)?;
    let (mut calib, mut tests) = batch.into_parts();
    calib.iter_mut().for_each(|c| c.weight = 1.0);
    tests.iter_mut().for_each(|t| t.weight = 1.0);
    Ok(PooledScores::new(&calib, &tests).evalues(gamma))
}

/// E-values under covariate shift, using the weights carried by the records.
pub fn weighted_sdr_evalues(
    calib: &[CalibSample],
    tests: &[TestPoint],
    gamma: f64,
) -> Result<SdrEvalueSet> {
    check_gamma(gamma)?;
    validate_batch(calib, tests)?;
    Ok(PooledScores::new(calib, tests).evalues(gamma))
}

/// One entry per distinct pooled score, in increasing order.
struct ScoreGroup {
    score: f64,
    /// `sum_i w_i L_i 1{s_i <= score}`.
    risk_below: f64,
    /// `#{k : s_k <= score}` over test points.
    tests_below: usize,
}

struct PooledScores {
    groups: Vec<ScoreGroup>,
    /// Group index of each test point's score.
    test_group: Vec<usize>,
    test_weight: Vec<f64>,
    calib_weight: f64,
}

impl PooledScores {
    fn new(calib: &[CalibSample], tests: &[TestPoint]) -> Self {
        enum Entry {
            Calib(f64),
            Test(usize),
        }
        let mut entries: Vec<(f64, Entry)> = calib
            .iter()
            .map(|c| (c.score, Entry::Calib(c.weight * c.risk)))
            .chain(
                tests
                    .iter()
                    .enumerate()
                    .map(|(j, t)| (t.score, Entry::Test(j))),
            )
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Equal scores are folded into one group so every member sees the
        // cumulative totals through the end of the tie block.
        let mut groups: Vec<ScoreGroup> = Vec::new();
        let mut test_group = vec![0; tests.len()];
        let mut risk_below = 0.0;
        let mut tests_below = 0;
        let mut k = 0;
        while k < entries.len() {
            let score = entries[k].0;
            while k < entries.len() && entries[k].0 == score {
                match entries[k].1 {
                    Entry::Calib(wl) => risk_below += wl,
                    Entry::Test(j) => {
                        tests_below += 1;
                        test_group[j] = groups.len();
                    }
                }
                k += 1;
            }
            groups.push(ScoreGroup {
                score,
                risk_below,
                tests_below,
            });
        }
        Self {
            groups,
            test_group,
            test_weight: tests.iter().map(|t| t.weight).collect(),
            calib_weight: calib.iter().map(|c| c.weight).sum(),
        }
    }

    fn evalues(&self, gamma: f64) -> SdrEvalueSet {
        let m = self.test_group.len();
        let per_test: Vec<(EValue, Option<f64>, Option<f64>)> = (0..m)
            .into_par_iter()
            .with_min_len(32)
            .map(|j| self.evalue_for(j, gamma))
            .collect();
        let mut out = SdrEvalueSet {
            evalues: Vec::with_capacity(m),
            thresholds_at_0: Vec::with_capacity(m),
            thresholds_at_1: Vec::with_capacity(m),
        };
        for (e, t0, t1) in per_test {
            out.evalues.push(e);
            out.thresholds_at_0.push(t0);
            out.thresholds_at_1.push(t1);
        }
        out
    }

    fn evalue_for(&self, j: usize, gamma: f64) -> (EValue, Option<f64>, Option<f64>) {
        let m = self.test_group.len() as f64;
        let own = self.test_group[j];
        let w = self.test_weight[j];
        let total = self.calib_weight + w;
        let scale = gamma * total / m;
        let g = &self.groups;

        // cap(t) = gamma W (1 + #{k != j : s_k <= t}) / m is the weighted
        // risk budget at cutoff t; lbar(t) = (cap(t) - A(t)) / w.
        let cap = |idx: usize| {
            let others = g[idx].tests_below - usize::from(idx >= own);
            scale * (1 + others) as f64
        };
        let own_risk = |idx: usize, ell: f64| if idx >= own { w * ell } else { 0.0 };

        let mut last0 = None;
        let mut last1 = None;
        for idx in (0..g.len()).rev() {
            let c = cap(idx);
            if last1.is_none() && within_budget(g[idx].risk_below + own_risk(idx, 1.0), c) {
                last1 = Some(idx);
            }
            if last0.is_none() && within_budget(g[idx].risk_below, c) {
                last0 = Some(idx);
            }
            if last0.is_some() && last1.is_some() {
                break;
            }
        }
        let t0 = last0.map(|i| g[i].score);
        let t1 = last1.map(|i| g[i].score);

        let (i0, i1) = match (last0, last1) {
            (Some(i0), Some(i1)) if i1 >= own => (i0, i1),
            _ => return (EValue::ZERO, t0, t1),
        };
        if i0 == i1 {
            return (EValue::ratio(total, w + g[i1].risk_below), t0, t1);
        }

        // Backward pass: `later_max` holds the largest lbar over feasible
        // (at l = 0) cutoffs strictly above the current one.
        let mut best = EValue::INFINITY;
        let mut later_max = f64::NEG_INFINITY;
        for idx in (i1..=i0).rev() {
            let a = g[idx].risk_below;
            let c = cap(idx);
            if !within_budget(a, c) {
                continue;
            }
            let lbar = (c - a) / w;
            if lbar >= later_max {
                let value = EValue::ratio(total, w * lbar.min(1.0) + a);
                if value < best {
                    best = value;
                }
            }
            later_max = later_max.max(lbar);
        }
        (best, t0, t1)
    }
}

/// Literal evaluation of the unweighted objective over a uniform grid of
/// `ell_grid_size` candidate risks, the endpoints, and every breakpoint
/// where a cutoff's estimate meets `gamma`. Record weights are ignored.
pub fn sdr_evalues_oracle(
    calib: &[CalibSample],
    tests: &[TestPoint],
    gamma: f64,
    ell_grid_size: usize,
) -> Result<SdrEvalueSet> {
    let (mut calib, mut tests) = validate_batch(calib, tests)?.into_parts();
    calib.iter_mut().for_each(|c| c.weight = 1.0);
    tests.iter_mut().for_each(|t| t.weight = 1.0);
    let grid = uniform_ell_grid(ell_grid_size)?;
    oracle(&calib, &tests, gamma, &grid, true)
}

/// Weighted analogue of [`sdr_evalues_oracle`].
pub fn weighted_sdr_evalues_oracle(
    calib: &[CalibSample],
    tests: &[TestPoint],
    gamma: f64,
    ell_grid_size: usize,
) -> Result<SdrEvalueSet> {
    validate_batch(calib, tests)?;
    let grid = uniform_ell_grid(ell_grid_size)?;
    oracle(calib, tests, gamma, &grid, true)
}

/// The objective minimised only over the supplied candidate risks (no
/// breakpoints added). With `ells = [1.0]` this is the objective at `l = 1`.
pub fn sdr_evalues_on_ells(
    calib: &[CalibSample],
    tests: &[TestPoint],
    gamma: f64,
    ells: &[f64],
    weighted: bool,
) -> Result<SdrEvalueSet> {
    let (mut calib, mut tests) = validate_batch(calib, tests)?.into_parts();
    if ells.is_empty() || ells.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(ScoreError::InvalidConfig(
            "candidate risks must be a non-empty subset of [0, 1]".into(),
        ));
    }
    if !weighted {
        calib.iter_mut().for_each(|c| c.weight = 1.0);
        tests.iter_mut().for_each(|t| t.weight = 1.0);
    }
    oracle(&calib, &tests, gamma, ells, false)
}

fn oracle(
    calib: &[CalibSample],
    tests: &[TestPoint],
    gamma: f64,
    ells: &[f64],
    add_breakpoints: bool,
) -> Result<SdrEvalueSet> {
    check_gamma(gamma)?;
    let m = tests.len();
    let pooled: Vec<f64> = calib
        .iter()
        .map(|c| c.score)
        .chain(tests.iter().map(|t| t.score))
        .collect();

    let mut out = SdrEvalueSet {
        evalues: vec![],
        thresholds_at_0: vec![],
        thresholds_at_1: vec![],
    };
    for (j, test) in tests.iter().enumerate() {
        let total: f64 = test.weight + calib.iter().map(|c| c.weight).sum::<f64>();
        let calib_risk = |t: f64| -> f64 {
            calib
                .iter()
                .filter(|c| c.score <= t)
                .map(|c| c.weight * c.risk)
                .sum()
        };
        let others = |t: f64| -> usize {
            tests
                .iter()
                .enumerate()
                .filter(|&(k, x)| k != j && x.score <= t)
                .count()
        };
        let estimate = |t: f64, ell: f64| -> f64 {
            let own = if test.score <= t {
                test.weight * ell
            } else {
                0.0
            };
            (own + calib_risk(t)) / (1 + others(t)) as f64 * m as f64 / total
        };
        let cutoff = |ell: f64| -> Option<f64> {
            pooled
                .iter()
                .copied()
                .filter(|&t| within_budget(estimate(t, ell), gamma))
                .max_by(f64::total_cmp)
        };

        let mut candidates: Vec<f64> = ells.to_vec();
        if add_breakpoints {
            candidates.extend([0.0, 1.0]);
            for &t in pooled.iter().filter(|&&t| t >= test.score) {
                let lbar = (gamma * total * (1 + others(t)) as f64 / m as f64 - calib_risk(t))
                    / test.weight;
                if (0.0..=1.0).contains(&lbar) {
                    candidates.push(lbar);
                }
            }
        }

        let mut best = EValue::INFINITY;
        for ell in candidates {
            let value = match cutoff(ell) {
                Some(t) if test.score <= t => {
                    EValue::ratio(total, test.weight * ell + calib_risk(t))
                }
                _ => EValue::ZERO,
            };
            if value < best {
                best = value;
            }
        }
        out.evalues.push(best);
        out.thresholds_at_0.push(cutoff(0.0));
        out.thresholds_at_1.push(cutoff(1.0));
    }
    Ok(out)
}

/// The conservative construction
///
/// ```text
/// e_j = 1{s_j <= that_j} / #{k : s_k <= ttilde} * m / alpha
/// ```
///
/// where `that_j` is the largest pooled score whose estimate, counting the
/// test point itself at full risk, stays within `alpha`, and `ttilde` the
/// largest one when the test point is left out of the numerator. In the
/// returned set `thresholds_at_0` carries `ttilde` and `thresholds_at_1`
/// carries `that_j`. Record weights are ignored.
pub fn sdr_evalues_conservative(
    calib: &[CalibSample],
    tests: &[TestPoint],
    alpha: f64,
) -> Result<SdrEvalueSet> {
    check_alpha(alpha)?;
    let (mut calib, tests) = validate_batch(calib, tests)?.into_parts();
    calib.iter_mut().for_each(|c| c.weight = 1.0);
    let pooled = PooledScores::new(&calib, &tests);
    let g = &pooled.groups;
    let m = tests.len() as f64;
    let n1 = calib.len() as f64 + 1.0;

    let estimate = |numerator: f64, selected: usize| -> f64 {
        if selected == 0 {
            if numerator == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            numerator / selected as f64 * m / n1
        }
    };

    let ttilde = (0..g.len())
        .rev()
        .find(|&i| within_budget(estimate(g[i].risk_below, g[i].tests_below), alpha));

    let mut out = SdrEvalueSet {
        evalues: Vec::with_capacity(tests.len()),
        thresholds_at_0: Vec::with_capacity(tests.len()),
        thresholds_at_1: Vec::with_capacity(tests.len()),
    };
    for &own in &pooled.test_group {
        let that = (0..g.len()).rev().find(|&i| {
            let own_term = if i >= own { 1.0 } else { 0.0 };
            within_budget(
                estimate(own_term + g[i].risk_below, g[i].tests_below),
                alpha,
            )
        });
        let e = match (that, ttilde) {
            (Some(h), Some(t)) if h >= own && g[t].tests_below > 0 => {
                EValue::ratio(m / alpha, g[t].tests_below as f64)
            }
            _ => EValue::ZERO,
        };
        out.evalues.push(e);
        out.thresholds_at_0.push(ttilde.map(|i| g[i].score));
        out.thresholds_at_1.push(that.map(|i| g[i].score));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Vec<CalibSample>, Vec<TestPoint>) {
        (
            vec![
                CalibSample::new(0.1, 0.0),
                CalibSample::new(0.3, 0.0),
                CalibSample::new(0.9, 0.5),
            ],
            vec![
                TestPoint::new(0.2),
                TestPoint::new(0.4),
                TestPoint::new(0.8),
            ],
        )
    }

    #[test]
    fn worked_instance() {
        let (calib, tests) = fixture();
        let fast = sdr_evalues(&calib, &tests, 0.5).unwrap();
        let slow = sdr_evalues_oracle(&calib, &tests, 0.5, 101).unwrap();
        for e in fast.evalues.iter().chain(&slow.evalues) {
            assert!((e.get() - 8.0 / 3.0).abs() < 1e-12);
        }
        assert!(fast.thresholds_at_0.iter().all(|t| *t == Some(0.9)));
        assert!(fast.thresholds_at_1.iter().all(|t| *t == Some(0.9)));
    }

    #[test]
    fn infeasible_cutoff_gives_zero() {
        let calib = [CalibSample::new(0.1, 1.0)];
        let tests = [TestPoint::new(0.9)];
        let fast = sdr_evalues(&calib, &tests, 0.1).unwrap();
        assert_eq!(fast.evalues, vec![EValue::ZERO]);
        assert_eq!(
            sdr_evalues_oracle(&calib, &tests, 0.1, 11).unwrap().evalues,
            vec![EValue::ZERO]
        );
    }

    #[test]
    fn conservative_worked_instance() {
        let (calib, tests) = fixture();
        let cons = sdr_evalues_conservative(&calib, &tests, 0.5).unwrap();
        for e in &cons.evalues {
            assert!((e.get() - 2.0).abs() < 1e-12);
        }
        let exact = sdr_evalues(&calib, &tests, 0.5).unwrap();
        for (c, e) in cons.evalues.iter().zip(&exact.evalues) {
            assert!(c.get() <= e.get());
        }
    }

    #[test]
    fn conservative_zero_above_cutoff() {
        let mut calib: Vec<_> = (1..=4)
            .map(|i| CalibSample::new(i as f64 / 10.0, 0.0))
            .collect();
        calib.extend([CalibSample::new(0.5, 1.0), CalibSample::new(0.6, 1.0)]);
        let tests = [TestPoint::new(0.05), TestPoint::new(0.95)];
        let cons = sdr_evalues_conservative(&calib, &tests, 0.3).unwrap();
        assert!((cons.evalues[0].get() - 2.0 / 0.3 / 2.0).abs() < 1e-12);
        assert_eq!(cons.thresholds_at_1[1], Some(0.5));
        assert_eq!(cons.evalues[1], EValue::ZERO);
    }

    #[test]
    fn impossible_budget_is_all_zero() {
        let calib: Vec<_> = (0..5)
            .map(|i| CalibSample::new(i as f64 / 5.0, 1.0))
            .collect();
        let tests: Vec<_> = (0..3)
            .map(|j| TestPoint::new(0.05 + j as f64 / 3.0))
            .collect();
        let fast = sdr_evalues(&calib, &tests, 0.05).unwrap();
        let slow = sdr_evalues_oracle(&calib, &tests, 0.05, 51).unwrap();
        assert!(fast.evalues.iter().all(|e| *e == EValue::ZERO));
        assert!(slow.evalues.iter().all(|e| *e == EValue::ZERO));
    }

    #[test]
    fn zero_above_threshold_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..15);
            let m = rng.random_range(1..10);
            let calib: Vec<_> = (0..n)
                .map(|_| CalibSample::new(rng.random(), rng.random()))
                .collect();
            let tests: Vec<_> = (0..m).map(|_| TestPoint::new(rng.random())).collect();
            let set = sdr_evalues(&calib, &tests, rng.random_range(0.05..0.6)).unwrap();
            for (j, t) in tests.iter().enumerate() {
                match set.thresholds_at_1[j] {
                    Some(t1) if t.score <= t1 => {}
                    _ => assert_eq!(set.evalues[j], EValue::ZERO),
                }
            }
        }
    }

    #[test]
    fn single_test_point_matches_mdr_oracle_structure() {
        // With m = 1 the selective estimate reduces to the marginal one, so
        // both e-values coincide.
        let calib = [
            CalibSample::new(0.1, 0.3),
            CalibSample::new(0.4, 0.1),
            CalibSample::new(0.7, 0.9),
        ];
        for s in [0.05, 0.2, 0.5, 0.8] {
            let sdr = sdr_evalues_oracle(&calib, &[TestPoint::new(s)], 0.3, 1001).unwrap();
            let mdr = crate::evalue_mdr::mdr_evalue_oracle(&calib, s, 0.3, 1001).unwrap();
            assert!(
                (sdr.evalues[0].get() - mdr.get()).abs() <= 1e-9 * mdr.get().max(1.0),
                "s={s}"
            );
        }
    }
}
