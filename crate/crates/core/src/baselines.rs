//! Threshold rules from uniform concentration bounds, used as power
//! comparators. They control risk with high probability rather than exactly.
//!
//! Both deploy every test point with score at most the returned cutoff.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::types::{check_alpha, validate_calib, within_budget, CalibSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Union bound over a fixed even grid.
    Hoeffding,
    /// Empirical Rademacher complexity over the calibration scores.
    Rademacher,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Hoeffding => "hoeffding",
            BaselineKind::Rademacher => "rademacher",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub delta: f64,
    /// Hoeffding grid size.
    pub grid_size: usize,
    /// Number of sign vectors averaged in the Rademacher estimate.
    pub rademacher_draws: usize,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            delta: 0.1,
            grid_size: 101,
            rademacher_draws: 100,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ScoreError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.grid_size < 2 {
            return Err(ScoreError::InvalidConfig(format!(
                "grid size must be at least 2, got {}",
                self.grid_size
            )));
        }
        if self.rademacher_draws == 0 {
            return Err(ScoreError::InvalidConfig(
                "at least one Rademacher draw is required".into(),
            ));
        }
        Ok(())
    }
}

/// `rademacher_draws * n` independent signs in `{-1, +1}`, row-major by draw.
pub fn rademacher_signs<R: Rng + ?Sized>(draws: usize, n: usize, rng: &mut R) -> Vec<f64> {
    (0..draws * n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

/// `sqrt(ln(c / delta) / (2 n))`.
pub fn hoeffding_slack(c: f64, delta: f64, n: usize) -> f64 {
    ((c / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Largest `t` in the grid with `MDRhat(t) + slack <= alpha`, where
/// `MDRhat(t) = (1/n) sum_i L_i 1{s_i <= t}`.
pub fn concentration_mdr_threshold(
    calib: &[CalibSample],
    config: &BaselineConfig,
    alpha: f64,
    signs: &[f64],
) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    config.check()?;
    validate_calib(calib)?;
    let n = calib.len();
    let stats = CalibStats::new(calib);
    match config.kind {
        BaselineKind::Hoeffding => {
            let eps = hoeffding_slack(2.0 * config.grid_size as f64, config.delta, n);
            Ok(even_grid(calib, config.grid_size)
                .into_iter()
                .rev()
                .find(|&t| within_budget(stats.mdr(t) + eps, alpha)))
        }
        BaselineKind::Rademacher => {
            let rad = stats.rademacher(signs, config.rademacher_draws, true)?;
            let slack = 2.0 * rad + 3.0 * hoeffding_slack(2.0, config.delta, n);
            Ok(stats
                .last_feasible(|i| within_budget(stats.risk_prefix[i] / n as f64 + slack, alpha)))
        }
    }
}

/// Largest `t` in the grid whose upper bound `A(t) / B(t)` on the
/// conditional risk `E[L | s(X) <= t]` is at most `alpha`; the bound is
/// `+inf` wherever the lower bound `B(t)` on `P(s(X) <= t)` is not positive.
pub fn concentration_sdr_threshold(
    calib: &[CalibSample],
    config: &BaselineConfig,
    alpha: f64,
    signs: &[f64],
) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    config.check()?;
    validate_calib(calib)?;
    let n = calib.len();
    let stats = CalibStats::new(calib);
    let bound = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    match config.kind {
        BaselineKind::Hoeffding => {
            let eps = hoeffding_slack(4.0 * config.grid_size as f64, config.delta, n);
            Ok(even_grid(calib, config.grid_size)
                .into_iter()
                .rev()
                .find(|&t| {
                    within_budget(bound(stats.mdr(t) + eps, stats.fraction(t) - eps), alpha)
                }))
        }
        BaselineKind::Rademacher => {
            let rad = stats.rademacher(signs, config.rademacher_draws, true)?;
            let rad_tilde = stats.rademacher(signs, config.rademacher_draws, false)?;
            let tail = 3.0 * hoeffding_slack(4.0, config.delta, n);
            Ok(stats.last_feasible(|i| {
                let a = stats.risk_prefix[i] / n as f64 + 2.0 * rad + tail;
                let b = stats.count_prefix[i] as f64 / n as f64 - 2.0 * rad_tilde - tail;
                within_budget(bound(a, b), alpha)
            }))
        }
    }
}

/// Even grid on `[0, 1]`, widened to cover every calibration score.
fn even_grid(calib: &[CalibSample], size: usize) -> Vec<f64> {
    let lo = calib.iter().map(|c| c.score).fold(0.0, f64::min);
    let hi = calib.iter().map(|c| c.score).fold(1.0, f64::max);
    (0..size)
        .map(|k| lo + (hi - lo) * k as f64 / (size - 1) as f64)
        .collect()
}

/// Calibration data sorted by score with prefix sums at each distinct score.
struct CalibStats {
    sorted: Vec<CalibSample>,
    order: Vec<usize>,
    /// Indices into `sorted` where a tie block ends.
    block_end: Vec<usize>,
    risk_prefix: Vec<f64>,
    count_prefix: Vec<usize>,
}

impl CalibStats {
    fn new(calib: &[CalibSample]) -> Self {
        let mut order: Vec<usize> = (0..calib.len()).collect();
        order.sort_by(|&a, &b| calib[a].score.total_cmp(&calib[b].score));
        let sorted: Vec<CalibSample> = order.iter().map(|&i| calib[i]).collect();
        let mut risk_prefix = Vec::with_capacity(sorted.len());
        let mut count_prefix = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        for (i, c) in sorted.iter().enumerate() {
            acc += c.risk;
            risk_prefix.push(acc);
            count_prefix.push(i + 1);
        }
        let block_end = (0..sorted.len())
            .filter(|&i| i + 1 == sorted.len() || sorted[i + 1].score != sorted[i].score)
            .collect();
        Self {
            sorted,
            order,
            block_end,
            risk_prefix,
            count_prefix,
        }
    }

    /// Index of the last sorted sample with score `<= t`.
    fn upto(&self, t: f64) -> Option<usize> {
        self.sorted.partition_point(|c| c.score <= t).checked_sub(1)
    }

    fn mdr(&self, t: f64) -> f64 {
        self.upto(t).map_or(0.0, |i| self.risk_prefix[i]) / self.sorted.len() as f64
    }

    fn fraction(&self, t: f64) -> f64 {
        self.upto(t).map_or(0.0, |i| self.count_prefix[i] as f64) / self.sorted.len() as f64
    }

    /// Largest calibration score whose tie block satisfies `ok`.
    fn last_feasible(&self, ok: impl Fn(usize) -> bool) -> Option<f64> {
        self.block_end
            .iter()
            .rev()
            .find(|&&i| ok(i))
            .map(|&i| self.sorted[i].score)
    }

    /// Average over sign vectors of `sup_t (1/n) sum_i sigma_i f_i 1{s_i <= t}`
    /// with `f_i = L_i` (`with_risk`) or `f_i = 1`, the supremum taken over
    /// the calibration scores.
    fn rademacher(&self, signs: &[f64], draws: usize, with_risk: bool) -> Result<f64> {
        let n = self.sorted.len();
        if signs.len() != draws * n {
            return Err(ScoreError::LengthMismatch {
                expected: draws * n,
                got: signs.len(),
            });
        }
        let mut total = 0.0;
        for row in signs.chunks_exact(n) {
            let mut acc = 0.0;
            let mut best = f64::NEG_INFINITY;
            let mut k = 0;
            for &end in &self.block_end {
                while k <= end {
                    let i = self.order[k];
                    acc += row[i] * if with_risk { self.sorted[k].risk } else { 1.0 };
                    k += 1;
                }
                best = best.max(acc);
            }
            total += best / n as f64;
        }
        Ok(total / draws as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_risk(n: usize) -> Vec<CalibSample> {
        (0..n)
            .map(|i| CalibSample::new(i as f64 / n as f64, 0.0))
            .collect()
    }

    #[test]
    fn hoeffding_slack_value() {
        let eps = hoeffding_slack(2.0 * 101.0, 0.1, 1000);
        assert!((eps - (2020f64.ln() / 2000.0).sqrt()).abs() < 1e-15);
        assert!((eps - 0.0617).abs() < 1e-4);
        assert!(hoeffding_slack(202.0, 0.1, 2000) < eps);
    }

    #[test]
    fn hoeffding_mdr_zero_risk() {
        let cfg = BaselineConfig::new(BaselineKind::Hoeffding);
        let calib = zero_risk(1000);
        assert_eq!(
            concentration_mdr_threshold(&calib, &cfg, 0.1, &[]).unwrap(),
            Some(1.0)
        );
        assert_eq!(
            concentration_mdr_threshold(&calib, &cfg, 0.05, &[]).unwrap(),
            None
        );
    }

    #[test]
    fn hoeffding_sdr_zero_risk_and_tiny_n() {
        let cfg = BaselineConfig {
            grid_size: 100,
            ..BaselineConfig::new(BaselineKind::Hoeffding)
        };
        assert_eq!(
            concentration_sdr_threshold(&zero_risk(1000), &cfg, 0.3, &[]).unwrap(),
            Some(1.0)
        );
        assert_eq!(
            concentration_sdr_threshold(&zero_risk(5), &cfg, 0.3, &[]).unwrap(),
            None
        );
    }

    #[test]
    fn hoeffding_sdr_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1000;
        let calib: Vec<_> = (0..n)
            .map(|_| CalibSample::new(rng.random(), 0.05))
            .collect();
        let cfg = BaselineConfig {
            grid_size: 100,
            ..BaselineConfig::new(BaselineKind::Hoeffding)
        };
        let alpha = 0.2;
        let got = concentration_sdr_threshold(&calib, &cfg, alpha, &[]).unwrap();

        let eps = ((4.0 * 100.0 / 0.1f64).ln() / (2.0 * n as f64)).sqrt();
        let mut expected = None;
        for k in 0..100 {
            let t = k as f64 / 99.0;
            let below: Vec<_> = calib.iter().filter(|c| c.score <= t).collect();
            let a = below.iter().map(|c| c.risk).sum::<f64>() / n as f64 + eps;
            let b = below.len() as f64 / n as f64 - eps;
            if b > 0.0 && a / b <= alpha {
                expected = Some(t);
            }
        }
        assert!(expected.is_some());
        assert_eq!(got, expected);
    }

    #[test]
    fn rademacher_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 300;
        let calib: Vec<_> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                CalibSample::new((s * 20.0).round() / 20.0, s * s * 0.5)
            })
            .collect();
        let cfg = BaselineConfig::new(BaselineKind::Rademacher);
        let signs = rademacher_signs(cfg.rademacher_draws, n, &mut rng);

        let sup = |risk: bool| -> f64 {
            signs
                .chunks(n)
                .map(|row| {
                    calib
                        .iter()
                        .map(|c| {
                            let t = c.score;
                            calib
                                .iter()
                                .zip(row)
                                .filter(|(d, _)| d.score <= t)
                                .map(|(d, s)| s * if risk { d.risk } else { 1.0 })
                                .sum::<f64>()
                                / n as f64
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum::<f64>()
                / cfg.rademacher_draws as f64
        };
        let rad = sup(true);
        let alpha = 0.1;
        let slack = 2.0 * rad + 3.0 * ((2.0 / 0.1f64).ln() / (2.0 * n as f64)).sqrt();
        let expected = calib
            .iter()
            .map(|c| c.score)
            .filter(|&t| {
                calib
                    .iter()
                    .filter(|d| d.score <= t)
                    .map(|d| d.risk)
                    .sum::<f64>()
                    / n as f64
                    + slack
                    <= alpha
            })
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            });
        assert_eq!(
            concentration_mdr_threshold(&calib, &cfg, alpha, &signs).unwrap(),
            expected
        );

        let rad_t = sup(false);
        let tail = 3.0 * ((4.0 / 0.1f64).ln() / (2.0 * n as f64)).sqrt();
        let alpha = 0.3;
        let expected = calib
            .iter()
            .map(|c| c.score)
            .filter(|&t| {
                let below: Vec<_> = calib.iter().filter(|d| d.score <= t).collect();
                let a = below.iter().map(|d| d.risk).sum::<f64>() / n as f64 + 2.0 * rad + tail;
                let b = below.len() as f64 / n as f64 - 2.0 * rad_t - tail;
                b > 0.0 && a / b <= alpha
            })
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            });
        assert_eq!(
            concentration_sdr_threshold(&calib, &cfg, alpha, &signs).unwrap(),
            expected
        );
    }

    #[test]
    fn config_and_sign_errors() {
        let calib = zero_risk(10);
        let bad = BaselineConfig {
            delta: 1.5,
            ..BaselineConfig::new(BaselineKind::Hoeffding)
        };
        assert!(matches!(
            concentration_mdr_threshold(&calib, &bad, 0.1, &[]),
            Err(ScoreError::InvalidConfig(_))
        ));
        let rad = BaselineConfig::new(BaselineKind::Rademacher);
        assert!(matches!(
            concentration_mdr_threshold(&calib, &rad, 0.1, &[1.0]),
            Err(ScoreError::LengthMismatch { .. })
        ));
    }
}
