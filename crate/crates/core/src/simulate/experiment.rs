//! End-to-end replicates: fit scores, draw calibration and test data, apply
//! a procedure at every level, and aggregate realized metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{
    generate_dataset, rejection_sample_shifted, reward_of, risk_of, shift_weight, DgpSetting,
    RewardKind, RiskKind, Sample, ShiftModel,
};
use super::metrics::{compute_metrics, mean_se, MetricsRow};
use crate::baselines::{
    concentration_mdr_threshold, concentration_sdr_threshold, rademacher_signs, BaselineConfig,
    BaselineKind,
};
use crate::error::{Result, ScoreError};
use crate::evalue_mdr::{boosted_mdr_decide, mdr_decide, weighted_mdr_decide};
use crate::evalue_sdr::{sdr_evalues, sdr_evalues_conservative, weighted_sdr_evalues};
use crate::models::{
    build_score, KnnRegressor, LogisticFitConfig, LogisticWeightModel, Method, ScoreMode,
};
use crate::testing::{boost_hete, boost_homo, ebh, sample_xi, BoostDraws, SelectionResult};
use crate::types::{check_alpha, CalibSample, Levels, RiskValue, TestPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoostMode {
    None,
    Hete,
    Homo,
}

impl BoostMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoostMode::None => "none",
            BoostMode::Hete => "hete",
            BoostMode::Homo => "homo",
        }
    }
}

/// Where covariate-shift weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightSource {
    /// Logistic density-ratio fit on fresh source and target samples.
    Estimated,
    /// The shift model's own acceptance probabilities.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: DgpSetting,
    pub risk: RiskKind,
    pub reward: RewardKind,
    pub shift: ShiftModel,
    pub weights: WeightSource,
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub alpha_grid: Vec<f64>,
    pub method: Method,
    pub boost: BoostMode,
    pub score_mode: ScoreMode,
    /// Use the conservative SDR construction.
    pub conservative: bool,
    /// Also report the Hoeffding and Rademacher baselines.
    pub baselines: bool,
    pub seed: u64,
    /// Size of the split used to fit the risk and reward regressors.
    pub train_size: usize,
    /// Size of the split used to fit the predictor inside the L2 risk.
    pub holdout_size: usize,
    /// Per-population sample size for the weight classifier.
    pub weight_fit_size: usize,
    pub knn_k: usize,
    pub predictor_k: usize,
}

impl ExperimentConfig {
    /// Benchmark defaults for a setting: its paired risk, constant reward,
    /// no shift, `n = 500`, `m = 100`, 100 replicates and levels
    /// `0.05, 0.10, ..., 0.50`.
    pub fn new(setting_id: u8, method: Method) -> Result<Self> {
        let setting = DgpSetting::new(setting_id)?;
        Ok(Self {
            setting,
            risk: setting.default_risk(),
            reward: RewardKind::Constant,
            shift: ShiftModel::None,
            weights: WeightSource::Estimated,
            n: 500,
            m: 100,
            reps: 100,
            alpha_grid: (1..=10).map(|k| k as f64 * 0.05).collect(),
            method,
            boost: BoostMode::None,
            score_mode: ScoreMode::RiskPrediction,
            conservative: false,
            baselines: false,
            seed: 0,
            train_size: 1000,
            holdout_size: 1000,
            weight_fit_size: 1000,
            knn_k: 50,
            predictor_k: 10,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ScoreError::InvalidConfig(msg.into()));
        if self.n == 0 || self.m == 0 || self.reps == 0 {
            return bad("n, m and reps must be positive");
        }
        if self.alpha_grid.is_empty() {
            return bad("at least one level is required");
        }
        for &a in &self.alpha_grid {
            check_alpha(a)?;
        }
        if self.knn_k == 0 || self.knn_k > self.train_size {
            return Err(ScoreError::KTooLarge {
                k: self.knn_k,
                n: self.train_size,
            });
        }
        if self.risk.needs_predictor()
            && (self.predictor_k == 0 || self.predictor_k > self.holdout_size)
        {
            return Err(ScoreError::KTooLarge {
                k: self.predictor_k,
                n: self.holdout_size,
            });
        }
        if self.shift != ShiftModel::None
            && self.weights == WeightSource::Estimated
            && self.weight_fit_size == 0
        {
            return bad("weight estimation needs a positive sample size");
        }
        if self.conservative && (self.method != Method::Sdr || self.shift != ShiftModel::None) {
            return bad("the conservative construction is only available for unweighted SDR");
        }
        Ok(())
    }

    fn weighted(&self) -> bool {
        self.shift != ShiftModel::None
    }
}

/// Everything a replicate needs after the data and models are drawn.
struct Replicate {
    calib_l: Vec<f64>,
    calib_r: Vec<f64>,
    calib_risk: Vec<f64>,
    calib_w: Vec<f64>,
    test_l: Vec<f64>,
    test_r: Vec<f64>,
    test_risk: Vec<RiskValue>,
    test_reward: Vec<f64>,
    test_w: Vec<f64>,
}

/// Per-replicate outcome of one procedure at one level.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    risk: f64,
    reward: f64,
    nsel: f64,
    total_risk: f64,
}

fn replicate_rngs(seed: u64, rep: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(2 * rep as u64);
    let mut boost = ChaCha8Rng::seed_from_u64(seed);
    boost.set_stream(2 * rep as u64 + 1);
    (data, boost)
}

fn draw_replicate(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Replicate> {
    let setting = &cfg.setting;
    let xs = |d: &[Sample]| d.iter().map(|p| p.x.clone()).collect::<Vec<_>>();

    let predictor = if cfg.risk.needs_predictor() {
        let holdout = generate_dataset(setting, cfg.holdout_size, rng)?;
        let ys: Vec<f64> = holdout.iter().map(|p| p.y).collect();
        Some(KnnRegressor::fit(&xs(&holdout), &ys, cfg.predictor_k)?)
    } else {
        None
    };
    let risk_for = |p: &Sample| -> Result<RiskValue> {
        let f = match &predictor {
            Some(model) => model.predict(&p.x)?,
            None => 0.0,
        };
        Ok(risk_of(&cfg.risk, f, p.y))
    };

    let train = generate_dataset(setting, cfg.train_size, rng)?;
    let train_x = xs(&train);
    let train_risk: Vec<f64> = train
        .iter()
        .map(|p| risk_for(p).map(RiskValue::get))
        .collect::<Result<_>>()?;
    let risk_model = KnnRegressor::fit(&train_x, &train_risk, cfg.knn_k)?;
    let reward_model = match cfg.reward {
        RewardKind::Constant => None,
        _ => {
            let r: Vec<f64> = train.iter().map(|p| reward_of(&cfg.reward, p.y)).collect();
            Some(KnnRegressor::fit(&train_x, &r, cfg.knn_k)?)
        }
    };
    let predict_reward = |x: &[Vec<f64>]| -> Result<Vec<f64>> {
        match &reward_model {
            Some(model) => model.predict_many(x),
            None => Ok(vec![1.0; x.len()]),
        }
    };

    let calib = generate_dataset(setting, cfg.n, rng)?;
    let test = match cfg.shift {
        ShiftModel::None => generate_dataset(setting, cfg.m, rng)?,
        model => rejection_sample_shifted(setting, &model, cfg.m, rng)?,
    };
    let (calib_x, test_x) = (xs(&calib), xs(&test));

    let (calib_w, test_w) = match (cfg.shift, cfg.weights) {
        (ShiftModel::None, _) => (vec![1.0; cfg.n], vec![1.0; cfg.m]),
        (model, WeightSource::True) => (
            calib_x
                .iter()
                .map(|x| shift_weight(&model, x))
                .collect::<Result<_>>()?,
            test_x
                .iter()
                .map(|x| shift_weight(&model, x))
                .collect::<Result<_>>()?,
        ),
        (model, WeightSource::Estimated) => {
            let source = generate_dataset(setting, cfg.weight_fit_size, rng)?;
            let target = rejection_sample_shifted(setting, &model, cfg.weight_fit_size, rng)?;
            let fit =
                LogisticWeightModel::fit(&xs(&source), &xs(&target), LogisticFitConfig::default())?;
            (fit.predict_many(&calib_x)?, fit.predict_many(&test_x)?)
        }
    };

    Ok(Replicate {
        calib_l: risk_model.predict_many(&calib_x)?,
        calib_r: predict_reward(&calib_x)?,
        calib_risk: calib
            .iter()
            .map(|p| risk_for(p).map(RiskValue::get))
            .collect::<Result<_>>()?,
        calib_w,
        test_l: risk_model.predict_many(&test_x)?,
        test_r: predict_reward(&test_x)?,
        test_risk: test.iter().map(risk_for).collect::<Result<_>>()?,
        test_reward: test.iter().map(|p| reward_of(&cfg.reward, p.y)).collect(),
        test_w,
    })
}

/// Procedure labels in output order: the configured method, then the
/// baselines when requested.
fn procedure_labels(cfg: &ExperimentConfig) -> Vec<(String, Option<BaselineKind>)> {
    let mut out = vec![(cfg.method.as_str().to_string(), None)];
    if cfg.baselines {
        for kind in [BaselineKind::Hoeffding, BaselineKind::Rademacher] {
            out.push((
                format!("{}_{}", cfg.method.as_str(), kind.as_str()),
                Some(kind),
            ));
        }
    }
    out
}

fn run_replicate(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<Vec<Outcome>>> {
    let (mut data_rng, mut boost_rng) = replicate_rngs(cfg.seed, rep);
    let data = draw_replicate(cfg, &mut data_rng)?;
    let m = cfg.m;
    let procedures = procedure_labels(cfg);

    let mut per_alpha = Vec::with_capacity(cfg.alpha_grid.len());
    for &alpha in &cfg.alpha_grid {
        let rule = build_score(cfg.score_mode, cfg.method, alpha);
        let calib: Vec<CalibSample> = (0..cfg.n)
            .map(|i| {
                CalibSample::weighted(
                    rule.apply(data.calib_l[i], data.calib_r[i]),
                    data.calib_risk[i],
                    data.calib_w[i],
                )
            })
            .collect();
        let tests: Vec<TestPoint> = (0..m)
            .map(|j| {
                TestPoint::weighted(rule.apply(data.test_l[j], data.test_r[j]), data.test_w[j])
            })
            .collect();

        let mut outcomes = Vec::with_capacity(procedures.len());
        for (_, baseline) in &procedures {
            let selection = match baseline {
                None => select(cfg, &calib, &tests, alpha, &mut boost_rng)?,
                Some(kind) => {
                    let bc = BaselineConfig {
                        grid_size: if cfg.method == Method::Sdr { 100 } else { 101 },
                        ..BaselineConfig::new(*kind)
                    };
                    let signs = match kind {
                        BaselineKind::Rademacher => {
                            rademacher_signs(bc.rademacher_draws, cfg.n, &mut boost_rng)
                        }
                        BaselineKind::Hoeffding => vec![],
                    };
                    let t = match cfg.method {
                        Method::Mdr => concentration_mdr_threshold(&calib, &bc, alpha, &signs)?,
                        Method::Sdr => concentration_sdr_threshold(&calib, &bc, alpha, &signs)?,
                    };
                    let selected = match t {
                        Some(t) => (0..m).filter(|&j| tests[j].score <= t).collect(),
                        None => vec![],
                    };
                    SelectionResult {
                        tau: selected.len(),
                        selected,
                        threshold: t.unwrap_or(f64::NEG_INFINITY),
                        boosted_evalues: None,
                    }
                }
            };
            let metrics = compute_metrics(&selection, &data.test_risk, &data.test_reward)?;
            let risk = match cfg.method {
                Method::Mdr => metrics.mdr_sum / m as f64,
                Method::Sdr => metrics.sdr_realized,
            };
            outcomes.push(Outcome {
                risk,
                reward: metrics.reward_sum / m as f64,
                nsel: metrics.n_selected as f64,
                total_risk: metrics.mdr_sum,
            });
        }
        per_alpha.push(outcomes);
    }
    Ok(per_alpha)
}

fn select(
    cfg: &ExperimentConfig,
    calib: &[CalibSample],
    tests: &[TestPoint],
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult> {
    match cfg.method {
        Method::Mdr => {
            let levels = Levels::new(alpha)?;
            let mut selected = Vec::new();
            for (j, t) in tests.iter().enumerate() {
                let d = match cfg.boost {
                    BoostMode::None if cfg.weighted() => weighted_mdr_decide(calib, *t, levels)?,
                    BoostMode::None => mdr_decide(calib, t.score, levels)?,
                    _ => boosted_mdr_decide(calib, *t, levels, sample_xi(rng), cfg.weighted())?,
                };
                if d.deploy {
                    selected.push(j);
                }
            }
            Ok(SelectionResult {
                tau: selected.len(),
                selected,
                threshold: 1.0 / alpha,
                boosted_evalues: None,
            })
        }
        Method::Sdr => {
            let set = if cfg.conservative {
                sdr_evalues_conservative(calib, tests, alpha)?
            } else if cfg.weighted() {
                weighted_sdr_evalues(calib, tests, alpha)?
            } else {
                sdr_evalues(calib, tests, alpha)?
            };
            match cfg.boost {
                BoostMode::None => ebh(&set.evalues, alpha),
                BoostMode::Hete => {
                    boost_hete(&set.evalues, alpha, &BoostDraws::sample(tests.len(), rng))
                }
                BoostMode::Homo => boost_homo(&set.evalues, alpha, sample_xi(rng)),
            }
        }
    }
}

/// Runs `reps` independent replicates and returns one row per level and
/// procedure, ordered by level. Replicates run in parallel; each draws from
/// its own random streams, so the output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let reps: Vec<Vec<Vec<Outcome>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, rep))
        .collect::<Result<_>>()?;

    let procedures = procedure_labels(cfg);
    let mut rows = Vec::new();
    for (a, &alpha) in cfg.alpha_grid.iter().enumerate() {
        for (p, (label, _)) in procedures.iter().enumerate() {
            let column =
                |f: fn(&Outcome) -> f64| reps.iter().map(|r| f(&r[a][p])).collect::<Vec<f64>>();
            let (realized_risk, se_risk) = mean_se(&column(|o| o.risk));
            let (mean_reward, se_reward) = mean_se(&column(|o| o.reward));
            let (mean_nsel, se_nsel) = mean_se(&column(|o| o.nsel));
            let (tdr, _) = mean_se(&column(|o| o.total_risk));
            rows.push(MetricsRow {
                alpha,
                method: label.clone(),
                boost: cfg.boost.as_str().into(),
                score_mode: cfg.score_mode.as_str().into(),
                setting: cfg.setting.id(),
                risk: cfg.risk.name().into(),
                shift: cfg.shift.name().into(),
                realized_risk,
                se_risk,
                mean_reward,
                se_reward,
                mean_nsel,
                se_nsel,
                tdr,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(setting: u8, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            n: 100,
            m: 20,
            reps: 4,
            train_size: 200,
            holdout_size: 200,
            weight_fit_size: 200,
            knn_k: 10,
            alpha_grid: vec![0.2, 0.4],
            seed: 5,
            ..ExperimentConfig::new(setting, method).unwrap()
        }
    }

    #[test]
    fn zero_risk_world_selects_everything() {
        for method in [Method::Mdr, Method::Sdr] {
            let cfg = ExperimentConfig {
                risk: RiskKind::Binary {
                    c: f64::NEG_INFINITY,
                },
                ..small(1, method)
            };
            for row in run_experiment(&cfg).unwrap() {
                assert_eq!(row.realized_risk, 0.0);
                assert_eq!(row.mean_nsel, 20.0);
            }
        }
    }

    #[test]
    fn all_one_risk_selects_nothing() {
        let cfg = ExperimentConfig {
            risk: RiskKind::Binary { c: f64::INFINITY },
            ..small(2, Method::Sdr)
        };
        for row in run_experiment(&cfg).unwrap() {
            assert_eq!(row.mean_nsel, 0.0);
        }
    }

    #[test]
    fn identical_configs_are_bit_identical() {
        let mut cfg = small(3, Method::Sdr);
        cfg.boost = BoostMode::Hete;
        cfg.baselines = true;
        cfg.reward = RewardKind::Squared;
        cfg.score_mode = ScoreMode::RiskRewardRatio;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a[1].method, "sdr_hoeffding");
    }

    #[test]
    fn shifted_runs_complete() {
        for (shift, weights) in [
            (ShiftModel::W1, WeightSource::Estimated),
            (ShiftModel::W3, WeightSource::True),
        ] {
            let cfg = ExperimentConfig {
                shift,
                weights,
                ..small(4, Method::Mdr)
            };
            let rows = run_experiment(&cfg).unwrap();
            assert!(rows
                .iter()
                .all(|r| r.realized_risk >= 0.0 && r.mean_nsel <= 20.0));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(run_experiment(&ExperimentConfig {
            reps: 0,
            ..small(1, Method::Mdr)
        })
        .is_err());
        assert!(run_experiment(&ExperimentConfig {
            alpha_grid: vec![1.2],
            ..small(1, Method::Mdr)
        })
        .is_err());
        assert!(run_experiment(&ExperimentConfig {
            conservative: true,
            ..small(1, Method::Mdr)
        })
        .is_err());
    }
}
