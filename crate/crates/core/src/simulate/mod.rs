//! Synthetic benchmarks: data generation, covariate shift, experiment
//! orchestration and realized metrics.

pub mod dgp;
pub mod experiment;
pub mod metrics;

pub use dgp::{
    generate_dataset, rejection_sample_shifted, reward_of, risk_of, shift_weight, DgpSetting,
    RewardKind, RiskKind, Sample, ShiftModel,
};
pub use experiment::{run_experiment, BoostMode, ExperimentConfig, WeightSource};
pub use metrics::{
    compute_metrics, fmt_f64, mean_se, write_metrics_csv, MetricsRow, SelectionMetrics,
    METRICS_HEADER,
};
