//! The six synthetic data-generating processes, their risk and reward
//! functions, and the covariate-shift models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::models::sigmoid;
use crate::types::RiskValue;

/// One generated observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Covariates `X ~ Unif[-1, 1]^dim`, response `Y = mu(X) + eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSetting {
    id: u8,
    pub sigma: f64,
    pub dim: usize,
}

impl DgpSetting {
    pub fn new(id: u8) -> Result<Self> {
        if !(1..=6).contains(&id) {
            return Err(ScoreError::UnknownSetting(id));
        }
        Ok(Self {
            id,
            sigma: 0.1,
            dim: 20,
        })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    /// The risk paired with this setting in the benchmark suite.
    pub fn default_risk(&self) -> RiskKind {
        match self.id {
            1 | 2 => RiskKind::Excess { c: 2.0 },
            3 => RiskKind::L2 { c: 0.6 },
            4 => RiskKind::L2 { c: 0.4 },
            _ => RiskKind::Sigmoid { tau: 10.0 },
        }
    }

    /// Regression function.
    pub fn mean(&self, x: &[f64]) -> f64 {
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        let bumps = |offset: f64| {
            let up = if x1 * x2 > 0.0 && x4 > 0.5 {
                x4 + offset
            } else {
                0.0
            };
            let down = if x1 * x2 <= 0.0 && x4 < -0.5 {
                x4 - offset
            } else {
                0.0
            };
            up + down
        };
        let smooth = x1 * x2 + x3 * x3 + (x4 - 1.0).exp();
        match self.id {
            1 | 3 => 3.0 + bumps(0.5),
            2 | 4 => 2.0 + smooth,
            5 => bumps(0.25),
            _ => smooth,
        }
    }

    /// Heteroscedastic Gaussian noise, clipped symmetrically.
    fn noise(&self, mu: f64, z: f64) -> f64 {
        let (scale, bound) = match self.id {
            1 | 3 => (self.sigma * (5.5 - mu), 1.5),
            2 | 4 => (self.sigma * (6.0 - mu), 1.0),
            _ => (self.sigma * (5.5 - mu) / 2.0, 1.5),
        };
        (scale * z).clamp(-bound, bound)
    }

    pub fn draw_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect()
    }

    pub fn draw_y<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let mu = self.mean(x);
        mu + self.noise(mu, rng.sample(StandardNormal))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let x = self.draw_x(rng);
        let y = self.draw_y(&x, rng);
        Sample { x, y }
    }
}

/// `count` i.i.d. draws from the setting.
pub fn generate_dataset<R: Rng + ?Sized>(
    setting: &DgpSetting,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(ScoreError::InvalidConfig(
            "dataset size must be at least 1".into(),
        ));
    }
    if setting.dim < 4 {
        return Err(ScoreError::DimensionMismatch {
            expected: 4,
            got: setting.dim,
        });
    }
    Ok((0..count).map(|_| setting.draw(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RiskKind {
    /// `Y 1{Y > c} / 6`.
    Excess { c: f64 },
    /// `clip((Y - f(X))^2, 0, c) / c`.
    L2 { c: f64 },
    /// `1 / (1 + e^{tau Y})`.
    Sigmoid { tau: f64 },
    /// `1{Y <= c}`; `c = -inf` is identically 0 and `c = +inf` identically 1.
    Binary { c: f64 },
}

impl RiskKind {
    pub fn name(&self) -> &'static str {
        match self {
            RiskKind::Excess { .. } => "excess",
            RiskKind::L2 { .. } => "l2",
            RiskKind::Sigmoid { .. } => "sigmoid",
            RiskKind::Binary { c } if *c == f64::INFINITY => "binary-all-one",
            RiskKind::Binary { c } if *c == f64::NEG_INFINITY => "zero",
            RiskKind::Binary { .. } => "binary",
        }
    }

    pub fn needs_predictor(&self) -> bool {
        matches!(self, RiskKind::L2 { .. })
    }
}

pub fn risk_of(risk: &RiskKind, f_pred: f64, y: f64) -> RiskValue {
    let v = match *risk {
        RiskKind::Excess { c } => {
            if y > c {
                y / 6.0
            } else {
                0.0
            }
        }
        RiskKind::L2 { c } => (y - f_pred).powi(2).clamp(0.0, c) / c,
        RiskKind::Sigmoid { tau } => sigmoid(-tau * y),
        RiskKind::Binary { c } => f64::from(y <= c),
    };
    RiskValue::clamped(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardKind {
    Constant,
    Squared,
}

impl RewardKind {
    pub fn name(&self) -> &'static str {
        match self {
            RewardKind::Constant => "constant",
            RewardKind::Squared => "squared",
        }
    }
}

pub fn reward_of(reward: &RewardKind, y: f64) -> f64 {
    match reward {
        RewardKind::Constant => 1.0,
        RewardKind::Squared => y * y,
    }
}

/// Target-to-source acceptance probabilities for covariate shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShiftModel {
    None,
    /// `sigmoid(0.1 (x1 + ... + x5))`.
    W1,
    /// `sigmoid(0.5 (x1 x2 + x2 x3 + x3 x4) + 0.3 sin(x1 + x2))`.
    W2,
    /// `sigmoid(3 exp(-|x' - a1|^2) + 2.1 exp(-|x' - a2|^2) - 2)` on the first
    /// three coordinates, `a1 = (2, -1, 1)`, `a2 = (-2, 1, -1)`.
    W3,
    /// Constant acceptance probability in `(0, 1]`.
    Constant(f64),
}

impl ShiftModel {
    pub fn name(&self) -> &'static str {
        match self {
            ShiftModel::None => "none",
            ShiftModel::W1 => "w1",
            ShiftModel::W2 => "w2",
            ShiftModel::W3 => "w3",
            ShiftModel::Constant(_) => "constant",
        }
    }

    fn min_dim(&self) -> usize {
        match self {
            ShiftModel::W1 => 5,
            ShiftModel::W2 => 4,
            ShiftModel::W3 => 3,
            _ => 0,
        }
    }
}

pub fn shift_weight(model: &ShiftModel, x: &[f64]) -> Result<f64> {
    if x.len() < model.min_dim() {
        return Err(ScoreError::DimensionMismatch {
            expected: model.min_dim(),
            got: x.len(),
        });
    }
    Ok(match *model {
        ShiftModel::None => 1.0,
        ShiftModel::Constant(p) => p,
        ShiftModel::W1 => sigmoid(0.1 * x[..5].iter().sum::<f64>()),
        ShiftModel::W2 => {
            sigmoid(0.5 * (x[0] * x[1] + x[1] * x[2] + x[2] * x[3]) + 0.3 * (x[0] + x[1]).sin())
        }
        ShiftModel::W3 => {
            let sq = |a: [f64; 3]| (0..3).map(|i| (x[i] - a[i]).powi(2)).sum::<f64>();
            sigmoid(
                3.0 * (-sq([2.0, -1.0, 1.0])).exp() + 2.1 * (-sq([-2.0, 1.0, -1.0])).exp() - 2.0,
            )
        }
    })
}

/// Attempts allowed per requested draw before giving up.
pub const MAX_ATTEMPTS_PER_DRAW: usize = 10_000;

/// Draws `count` samples from the shifted distribution by accepting a base
/// draw `x` with probability `w(x)`. The response is drawn only for
/// accepted covariates.
pub fn rejection_sample_shifted<R: Rng + ?Sized>(
    setting: &DgpSetting,
    model: &ShiftModel,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    match model {
        ShiftModel::None => {
            return Err(ScoreError::InvalidConfig(
                "rejection sampling needs a shift model".into(),
            ))
        }
        ShiftModel::Constant(p) if !(*p > 0.0 && *p <= 1.0) => {
            return Err(ScoreError::InvalidConfig(format!(
                "acceptance probability must lie in (0, 1], got {p}"
            )))
        }
        _ => {}
    }
    let max_attempts = count
        .saturating_mul(MAX_ATTEMPTS_PER_DRAW)
        .max(MAX_ATTEMPTS_PER_DRAW);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == max_attempts {
            return Err(ScoreError::SamplingStalled { attempts });
        }
        attempts += 1;
        let x = setting.draw_x(rng);
        if rng.random::<f64>() < shift_weight(model, &x)? {
            let y = setting.draw_y(&x, rng);
            out.push(Sample { x, y });
        }
    }
    Ok(out)
}
