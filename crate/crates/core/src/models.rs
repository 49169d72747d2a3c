//! Small learners used to build scores and covariate-shift weights.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};

/// k-nearest-neighbour regression under squared Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnRegressor {
    dim: usize,
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    k: usize,
}

impl KnnRegressor {
    pub fn fit(train_x: &[Vec<f64>], train_y: &[f64], k: usize) -> Result<Self> {
        if train_x.is_empty() {
            return Err(ScoreError::EmptyInput);
        }
        if train_x.len() != train_y.len() {
            return Err(ScoreError::LengthMismatch {
                expected: train_x.len(),
                got: train_y.len(),
            });
        }
        if k == 0 {
            return Err(ScoreError::InvalidConfig("k must be at least 1".into()));
        }
        if k > train_x.len() {
            return Err(ScoreError::KTooLarge {
                k,
                n: train_x.len(),
            });
        }
        let dim = train_x[0].len();
        if let Some(bad) = train_x.iter().find(|x| x.len() != dim) {
            return Err(ScoreError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            dim,
            train_x: train_x.concat(),
            train_y: train_y.to_vec(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Mean target of the `k` closest training points; equal distances are
    /// resolved in favour of the lower training index.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(ScoreError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut dist: Vec<(f64, usize)> = self
            .train_x
            .chunks_exact(self.dim.max(1))
            .take(self.train_y.len())
            .enumerate()
            .map(|(i, row)| (row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, order);
        }
        Ok(dist[..self.k]
            .iter()
            .map(|&(_, i)| self.train_y[i])
            .sum::<f64>()
            / self.k as f64)
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Settings for [`LogisticWeightModel::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFitConfig {
    pub lr: f64,
    pub iters: usize,
    pub clip: (f64, f64),
}

impl Default for LogisticFitConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iters: 500,
            clip: (0.05, 20.0),
        }
    }
}

/// Density-ratio estimate `dQ/dP` from a logistic classifier separating
/// source (`P`, label 0) from target (`Q`, label 1) samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticWeightModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Feature means and standard deviations used for standardization.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// `n_source / n_target`.
    pub prior_ratio: f64,
    pub clip: (f64, f64),
    /// Mean logistic loss after the last iteration.
    pub final_loss: f64,
}

impl LogisticWeightModel {
    /// Full-batch gradient descent on the mean logistic loss over
    /// standardized features.
    pub fn fit(
        source_x: &[Vec<f64>],
        target_x: &[Vec<f64>],
        config: LogisticFitConfig,
    ) -> Result<Self> {
        if source_x.is_empty() || target_x.is_empty() {
            return Err(ScoreError::EmptyInput);
        }
        let (lo, hi) = config.clip;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ScoreError::InvalidConfig(format!(
                "clip bounds must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(ScoreError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        let dim = source_x[0].len();
        for x in source_x.iter().chain(target_x) {
            if x.len() != dim {
                return Err(ScoreError::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
        }

        let rows: Vec<&Vec<f64>> = source_x.iter().chain(target_x).collect();
        let mut labels = vec![0.0; source_x.len()];
        labels.resize(rows.len(), 1.0);
        let total = rows.len() as f64;
        let center: Vec<f64> = (0..dim)
            .map(|d| rows.iter().map(|x| x[d]).sum::<f64>() / total)
            .collect();
        let scale: Vec<f64> = (0..dim)
            .map(|d| {
                let var = rows.iter().map(|x| (x[d] - center[d]).powi(2)).sum::<f64>() / total;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|x| (0..dim).map(|d| (x[d] - center[d]) / scale[d]).collect())
            .collect();

        let mut coef = vec![0.0; dim];
        let mut intercept = 0.0;
        let loss_at = |coef: &[f64], intercept: f64| -> f64 {
            z.iter()
                .zip(&labels)
                .map(|(zi, &y)| {
                    let eta = intercept + dot(coef, zi);
                    softplus(eta) - y * eta
                })
                .sum::<f64>()
                / total
        };
        for _ in 0..config.iters {
            let mut grad = vec![0.0; dim];
            let mut grad_b = 0.0;
            for (zi, &y) in z.iter().zip(&labels) {
                let resid = sigmoid(intercept + dot(&coef, zi)) - y;
                grad_b += resid;
                for (g, v) in grad.iter_mut().zip(zi) {
                    *g += resid * v;
                }
            }
            intercept -= config.lr * grad_b / total;
            for (c, g) in coef.iter_mut().zip(&grad) {
                *c -= config.lr * g / total;
            }
            if !intercept.is_finite() || coef.iter().any(|c| !c.is_finite()) {
                return Err(ScoreError::DivergedFit);
            }
        }
        let final_loss = loss_at(&coef, intercept);
        if !final_loss.is_finite() {
            return Err(ScoreError::DivergedFit);
        }
        Ok(Self {
            coef,
            intercept,
            center,
            scale,
            prior_ratio: source_x.len() as f64 / target_x.len() as f64,
            clip: config.clip,
            final_loss,
        })
    }

    /// `prior_ratio * p / (1 - p)` before clipping.
    pub fn raw_weight(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(ScoreError::DimensionMismatch {
                expected: self.coef.len(),
                got: x.len(),
            });
        }
        let eta = self.intercept
            + x.iter()
                .zip(&self.center)
                .zip(&self.scale)
                .zip(&self.coef)
                .map(|(((v, c), s), b)| b * (v - c) / s)
                .sum::<f64>();
        Ok(self.prior_ratio * eta.exp())
    }

    /// Clipped weight estimate.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let (lo, hi) = self.clip;
        let raw = self.raw_weight(x)?;
        Ok(if raw.is_nan() { hi } else { raw.clamp(lo, hi) })
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Which deployment risk the score is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Mdr,
    Sdr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mdr => "mdr",
            Method::Sdr => "sdr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreMode {
    /// `s(x) = lhat(x)`.
    RiskPrediction,
    /// `s(x) = lhat(x) / rhat(x)` for MDR, `(lhat(x) - alpha) / rhat(x)` for SDR.
    RiskRewardRatio,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::RiskPrediction => "risk_prediction",
            ScoreMode::RiskRewardRatio => "risk_reward_ratio",
        }
    }
}

/// Smallest reward prediction used as a divisor.
pub const REWARD_FLOOR: f64 = 1e-6;

/// A score built from risk and reward predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    pub mode: ScoreMode,
    pub method: Method,
    pub alpha: f64,
}

pub fn build_score(mode: ScoreMode, method: Method, alpha: f64) -> ScoreRule {
    ScoreRule {
        mode,
        method,
        alpha,
    }
}

impl ScoreRule {
    pub fn apply(&self, l_hat: f64, r_hat: f64) -> f64 {
        let r = r_hat.max(REWARD_FLOOR);
        match (self.mode, self.method) {
            (ScoreMode::RiskPrediction, _) => l_hat,
            (ScoreMode::RiskRewardRatio, Method::Mdr) => l_hat / r,
            (ScoreMode::RiskRewardRatio, Method::Sdr) => (l_hat - self.alpha) / r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn knn_examples() {
        let m = KnnRegressor::fit(&line(&[0.0, 1.0]), &[0.0, 1.0], 1).unwrap();
        assert_eq!(m.predict(&[0.2]).unwrap(), 0.0);
        let m = KnnRegressor::fit(&line(&[0.0, 1.0, 2.0]), &[0.0, 1.0, 4.0], 2).unwrap();
        assert_eq!(m.predict(&[0.9]).unwrap(), 0.5);
        let m = KnnRegressor::fit(&line(&[0.0, 1.0, 2.0]), &[0.0, 1.0, 4.0], 3).unwrap();
        assert!((m.predict(&[17.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            KnnRegressor::fit(&line(&[0.0]), &[1.0], 2),
            Err(ScoreError::KTooLarge { k: 2, n: 1 })
        );
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let m = KnnRegressor::fit(&line(&[0.0, 2.0, 2.0]), &[5.0, 1.0, 9.0], 1).unwrap();
        assert_eq!(m.predict(&[1.0]).unwrap(), 5.0);
        assert_eq!(m.predict(&[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn knn_one_reproduces_training_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.random()).collect())
            .collect();
        let ys: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let m = KnnRegressor::fit(&xs, &ys, 1).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict(x).unwrap(), *y);
        }
    }

    fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn identical_samples_give_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = uniform_rows(&mut rng, 1000, 5);
        let tgt = uniform_rows(&mut rng, 1000, 5);
        let model = LogisticWeightModel::fit(&src, &tgt, LogisticFitConfig::default()).unwrap();
        let eval = uniform_rows(&mut rng, 1000, 5);
        let w = model.predict_many(&eval).unwrap();
        let mae = w.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / w.len() as f64;
        assert!(mae < 0.15, "mae {mae}");
        assert!(model.final_loss.is_finite());
    }

    #[test]
    fn prior_ratio_scales_and_clip_binds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = uniform_rows(&mut rng, 400, 3);
        let tgt: Vec<Vec<f64>> = uniform_rows(&mut rng, 200, 3)
            .into_iter()
            .map(|x| x.into_iter().map(|v| v + 0.5).collect())
            .collect();
        let model = LogisticWeightModel::fit(&src, &tgt, LogisticFitConfig::default()).unwrap();
        assert_eq!(model.prior_ratio, 2.0);
        let x = [0.1, 0.2, 0.3];
        let mut doubled = model.clone();
        doubled.prior_ratio *= 2.0;
        let (a, b) = (
            model.raw_weight(&x).unwrap(),
            doubled.raw_weight(&x).unwrap(),
        );
        assert!((b - 2.0 * a).abs() <= 1e-12 * b);
        for far in [[1e3, 1e3, 1e3], [-1e3, -1e3, -1e3]] {
            let w = model.predict(&far).unwrap();
            assert!((0.05..=20.0).contains(&w));
        }
    }

    #[test]
    fn diverging_fit_is_reported() {
        let src = vec![vec![0.0], vec![1.0], vec![2.0]];
        let tgt = vec![vec![1.0], vec![2.0], vec![0.5]];
        let cfg = LogisticFitConfig {
            lr: 1e308,
            iters: 20,
            clip: (0.05, 20.0),
        };
        assert_eq!(
            LogisticWeightModel::fit(&src, &tgt, cfg),
            Err(ScoreError::DivergedFit)
        );
    }

    #[test]
    fn score_rules() {
        let mdr = build_score(ScoreMode::RiskRewardRatio, Method::Mdr, 0.1);
        assert_eq!(mdr.apply(0.4, 2.0), 0.2);
        let sdr = build_score(ScoreMode::RiskRewardRatio, Method::Sdr, 0.1);
        assert!((sdr.apply(0.4, 2.0) - 0.15).abs() < 1e-15);
        assert_eq!(
            build_score(ScoreMode::RiskPrediction, Method::Sdr, 0.1).apply(0.4, 2.0),
            0.4
        );
        assert!(mdr.apply(0.4, 0.0).is_finite());
        let pred = build_score(ScoreMode::RiskPrediction, Method::Mdr, 0.1);
        let l = [0.3, 0.1, 0.7, 0.2];
        let rank = |f: &dyn Fn(f64) -> f64| {
            let mut idx: Vec<usize> = (0..l.len()).collect();
            idx.sort_by(|&a, &b| f(l[a]).total_cmp(&f(l[b])));
            idx
        };
        assert_eq!(rank(&|v| mdr.apply(v, 1.0)), rank(&|v| pred.apply(v, 1.0)));
    }
}
