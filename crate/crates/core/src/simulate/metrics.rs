//! Realized risk and reward of a selection, and the aggregated output rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::testing::SelectionResult;
use crate::types::RiskValue;

/// Realized quantities of one selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// `sum_{j in R} L_j / max(1, |R|)`.
    pub sdr_realized: f64,
    /// `sum_{j in R} L_j`.
    pub mdr_sum: f64,
    /// `sum_{j in R} r_j`.
    pub reward_sum: f64,
    pub n_selected: usize,
}

pub fn compute_metrics(
    selection: &SelectionResult,
    risks: &[RiskValue],
    rewards: &[f64],
) -> Result<SelectionMetrics> {
    if risks.len() != rewards.len() {
        return Err(ScoreError::LengthMismatch {
            expected: risks.len(),
            got: rewards.len(),
        });
    }
    if let Some(&j) = selection.selected.iter().find(|&&j| j >= risks.len()) {
        return Err(ScoreError::LengthMismatch {
            expected: risks.len(),
            got: j + 1,
        });
    }
    let mdr_sum: f64 = selection.selected.iter().map(|&j| risks[j].get()).sum();
    let reward_sum: f64 = selection.selected.iter().map(|&j| rewards[j]).sum();
    let k = selection.selected.len();
    Ok(SelectionMetrics {
        sdr_realized: mdr_sum / k.max(1) as f64,
        mdr_sum,
        reward_sum,
        n_selected: k,
    })
}

/// Aggregated result for one level and one procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub alpha: f64,
    /// `mdr`, `sdr`, or a baseline label such as `sdr_hoeffding`.
    pub method: String,
    pub boost: String,
    pub score_mode: String,
    pub setting: u8,
    pub risk: String,
    pub shift: String,
    /// Realized MDR (method `mdr`) or SDR (method `sdr`).
    pub realized_risk: f64,
    pub se_risk: f64,
    /// Average reward per test point.
    pub mean_reward: f64,
    pub se_reward: f64,
    /// Average number of selected test points.
    pub mean_nsel: f64,
    pub se_nsel: f64,
    /// Average total risk of the selected points.
    pub tdr: f64,
}

pub const METRICS_HEADER: &str =
    "alpha,method,boost,score_mode,setting,risk,shift,realized_risk,se_risk,mean_reward,mean_nsel,tdr";

/// Writes rows as CSV with floats at 17 significant digits.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| ScoreError::Io(e.to_string());
    writeln!(out, "{METRICS_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.alpha),
            r.method,
            r.boost,
            r.score_mode,
            r.setting,
            r.risk,
            r.shift,
            fmt_f64(r.realized_risk),
            fmt_f64(r.se_risk),
            fmt_f64(r.mean_reward),
            fmt_f64(r.mean_nsel),
            fmt_f64(r.tdr)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// 17 significant digits in scientific notation; `inf` for infinity.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
