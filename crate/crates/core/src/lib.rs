//! Selective conformal risk control with e-values.
//!
//! Calibration data enter as [`CalibSample`]s (score, realized risk, weight)
//! and test data as [`TestPoint`]s. [`evalue_mdr`] decides deployment for a
//! single test point under a marginal risk budget; [`evalue_sdr`] builds one
//! e-value per test point, and [`testing`] turns those into a selection set
//! with the eBH filter, optionally boosted. [`simulate`] reproduces the
//! synthetic benchmarks end to end.

pub mod baselines;
pub mod error;
pub mod evalue_mdr;
pub mod evalue_sdr;
pub mod io;
pub mod models;
pub mod simulate;
pub mod testing;
pub mod types;

pub use baselines::{
    concentration_mdr_threshold, concentration_sdr_threshold, hoeffding_slack, rademacher_signs,
    BaselineConfig, BaselineKind,
};
pub use error::{Result, ScoreError};
pub use evalue_mdr::{
    boosted_mdr_decide, mdr_decide, mdr_evalue_on_ells, mdr_evalue_oracle, oracle_decision,
    uniform_ell_grid, weighted_mdr_decide, weighted_mdr_evalue_oracle, MdrDecision,
    DEFAULT_ELL_GRID,
};
pub use evalue_sdr::{
    sdr_evalues, sdr_evalues_conservative, sdr_evalues_on_ells, sdr_evalues_oracle,
    weighted_sdr_evalues, weighted_sdr_evalues_oracle, SdrEvalueSet,
};
pub use models::{
    build_score, KnnRegressor, LogisticFitConfig, LogisticWeightModel, Method, ScoreMode, ScoreRule,
};
pub use simulate::{run_experiment, ExperimentConfig, MetricsRow};
pub use testing::{
    bh, boost_hete, boost_homo, conformal_pvalues, ebh, sample_xi, BoostDraws, SelectionResult,
};
pub use types::{
    rescale_risk, unrescale_risk, validate_batch, within_budget, Batch, CalibSample, EValue,
    Levels, RiskRescaler, RiskValue, TestPoint, BUDGET_TOL,
};
