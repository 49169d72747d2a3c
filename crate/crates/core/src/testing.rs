//! Turning evidence into decisions: the eBH step-up filter, boosted eBH, and
//! Benjamini-Hochberg on conformal p-values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::types::{check_alpha, within_budget, EValue};

/// Outcome of a step-up filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected test indices in increasing order.
    pub selected: Vec<usize>,
    /// Number of selections.
    pub tau: usize,
    /// Cutoff the statistics were compared against; `+inf` when nothing is
    /// selected by eBH.
    pub threshold: f64,
    /// The e-values actually thresholded, when boosting was applied.
    pub boosted_evalues: Option<Vec<EValue>>,
}

impl SelectionResult {
    /// 0/1 decision per test point.
    pub fn indicator(&self, m: usize) -> Vec<bool> {
        let mut out = vec![false; m];
        for &j in &self.selected {
            out[j] = true;
        }
        out
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.selected.binary_search(&j).is_ok()
    }
}

/// Boosting divisors, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostDraws {
    xis: Vec<f64>,
}

impl BoostDraws {
    pub fn new(xis: Vec<f64>) -> Result<Self> {
        if xis.is_empty() || xis.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(ScoreError::InvalidDraws);
        }
        Ok(Self { xis })
    }

    /// `m` independent uniforms on `(0, 1]`.
    pub fn sample<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self {
            xis: (0..m).map(|_| sample_xi(rng)).collect(),
        }
    }

    pub fn xis(&self) -> &[f64] {
        &self.xis
    }
}

/// One uniform draw on `(0, 1]`.
pub fn sample_xi<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// eBH at level `alpha`: `tau = max{t : #{j : E_j >= m / (alpha t)} >= t}`,
/// selecting every `j` with `E_j >= m / (alpha tau)`.
pub fn ebh(evalues: &[EValue], alpha: f64) -> Result<SelectionResult> {
    check_alpha(alpha)?;
    if evalues.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    let m = evalues.len();
    let threshold = |tau: usize| m as f64 / (alpha * tau as f64);

    let mut sorted: Vec<f64> = evalues.iter().map(|e| e.get()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // The count at threshold(t) is at least t exactly when the t-th largest
    // e-value clears it.
    let tau = (1..=m)
        .rev()
        .find(|&t| within_budget(threshold(t), sorted[t - 1]))
        .unwrap_or(0);
    if tau == 0 {
        return Ok(SelectionResult {
            selected: vec![],
            tau: 0,
            threshold: f64::INFINITY,
            boosted_evalues: None,
        });
    }
    let thr = threshold(tau);
    let selected: Vec<usize> = (0..m)
        .filter(|&j| within_budget(thr, evalues[j].get()))
        .collect();
    debug_assert_eq!(selected.len(), tau);
    Ok(SelectionResult {
        selected,
        tau,
        threshold: thr,
        boosted_evalues: None,
    })
}

/// eBH on `E_j / xi_j` with one divisor per test point.
pub fn boost_hete(evalues: &[EValue], alpha: f64, draws: &BoostDraws) -> Result<SelectionResult> {
    if draws.xis.len() != evalues.len() {
        return Err(ScoreError::InvalidDraws);
    }
    boosted(evalues, alpha, |j| draws.xis[j])
}

/// eBH on `E_j / xi` with one shared divisor.
pub fn boost_homo(evalues: &[EValue], alpha: f64, xi: f64) -> Result<SelectionResult> {
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(ScoreError::InvalidDraws);
    }
    boosted(evalues, alpha, |_| xi)
}

fn boosted(evalues: &[EValue], alpha: f64, xi: impl Fn(usize) -> f64) -> Result<SelectionResult> {
    let scaled: Vec<EValue> = evalues
        .iter()
        .enumerate()
        .map(|(j, e)| EValue::ratio(e.get(), xi(j)))
        .collect();
    let mut result = ebh(&scaled, alpha)?;
    result.boosted_evalues = Some(scaled);
    Ok(result)
}

/// `p_j = (1 + #{i : V_i <= Vhat_j}) / (n + 1)`.
pub fn conformal_pvalues(calib_v: &[f64], test_vhat: &[f64]) -> Result<Vec<f64>> {
    if calib_v.is_empty() || test_vhat.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    let mut sorted = calib_v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n1 = (sorted.len() + 1) as f64;
    Ok(test_vhat
        .iter()
        .map(|v| (1 + sorted.partition_point(|x| x <= v)) as f64 / n1)
        .collect())
}

/// Benjamini-Hochberg: select the `k*` smallest p-values, where
/// `k* = max{k : p_(k) <= alpha k / m}`. Ties keep index order.
pub fn bh(pvalues: &[f64], alpha: f64) -> Result<SelectionResult> {
    check_alpha(alpha)?;
    if pvalues.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    if let Some(i) = pvalues.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(ScoreError::OutOfRange {
            value: pvalues[i],
            lo: 0.0,
            hi: 1.0,
        });
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let k = (1..=m)
        .rev()
        .find(|&k| within_budget(pvalues[order[k - 1]], alpha * k as f64 / m as f64))
        .unwrap_or(0);
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    let threshold = if k == 0 {
        0.0
    } else {
        alpha * k as f64 / m as f64
    };
    Ok(SelectionResult {
        selected,
        tau: k,
        threshold,
        boosted_evalues: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> Vec<EValue> {
        v.iter().map(|&x| EValue::new(x).unwrap()).collect()
    }

    #[test]
    fn ebh_worked_instance() {
        let r = ebh(&ev(&[10.0, 4.0, 0.5]), 0.5).unwrap();
        assert_eq!(r.tau, 2);
        assert_eq!(r.threshold, 3.0);
        assert_eq!(r.selected, vec![0, 1]);
    }

    #[test]
    fn ebh_edge_cases() {
        let none = ebh(&ev(&[0.0; 4]), 0.2).unwrap();
        assert!(none.selected.is_empty());
        assert!(none.threshold.is_infinite());
        let all = ebh(&ev(&[20.0; 4]), 0.2).unwrap();
        assert_eq!(all.selected, vec![0, 1, 2, 3]);
        let inf = ebh(&[EValue::INFINITY, EValue::ZERO], 0.1).unwrap();
        assert_eq!(inf.selected, vec![0]);
        assert_eq!(ebh(&ev(&[1.0]), 1.5), Err(ScoreError::InvalidAlpha(1.5)));
    }

    #[test]
    fn boosting_worked_instance() {
        let e = ev(&[1.2, 0.8]);
        assert!(ebh(&e, 0.5).unwrap().selected.is_empty());
        let hete = boost_hete(&e, 0.5, &BoostDraws::new(vec![0.25, 0.25]).unwrap()).unwrap();
        assert_eq!(hete.selected, vec![0, 1]);
        let b = hete.boosted_evalues.unwrap();
        assert!((b[0].get() - 4.8).abs() < 1e-12 && (b[1].get() - 3.2).abs() < 1e-12);
        assert_eq!(boost_homo(&e, 0.5, 0.25).unwrap().selected, vec![0, 1]);
    }

    #[test]
    fn unit_boost_is_noop() {
        let e = ev(&[3.0, 7.0, 0.1, 12.0]);
        let plain = ebh(&e, 0.3).unwrap();
        assert_eq!(boost_homo(&e, 0.3, 1.0).unwrap().selected, plain.selected);
        let draws = BoostDraws::new(vec![1.0; 4]).unwrap();
        assert_eq!(
            boost_hete(&e, 0.3, &draws).unwrap().selected,
            plain.selected
        );
    }

    #[test]
    fn invalid_draws() {
        assert_eq!(BoostDraws::new(vec![0.0]), Err(ScoreError::InvalidDraws));
        assert_eq!(BoostDraws::new(vec![1.5]), Err(ScoreError::InvalidDraws));
        let d = BoostDraws::new(vec![0.5]).unwrap();
        assert_eq!(
            boost_hete(&ev(&[1.0, 2.0]), 0.1, &d),
            Err(ScoreError::InvalidDraws)
        );
        assert_eq!(
            boost_homo(&ev(&[1.0]), 0.1, 0.0),
            Err(ScoreError::InvalidDraws)
        );
    }

    #[test]
    fn pvalue_examples() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(
            conformal_pvalues(&v, &[2.5, 0.0, 9.0]).unwrap(),
            vec![0.75, 0.25, 1.0]
        );
        assert_eq!(conformal_pvalues(&[], &[1.0]), Err(ScoreError::EmptyInput));
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh(&[0.01, 0.04, 0.9], 0.1).unwrap().selected, vec![0, 1]);
        assert!(bh(&[1.0; 5], 0.1).unwrap().selected.is_empty());
        assert_eq!(bh(&[0.001; 4], 0.1).unwrap().selected, vec![0, 1, 2, 3]);
        assert_eq!(bh(&[0.9, 0.01, 0.04], 0.1).unwrap().selected, vec![1, 2]);
    }

    fn evalue_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![4 => 0.0f64..60.0, 1 => Just(f64::INFINITY), 1 => Just(0.0)],
            1..30,
        )
    }

    proptest! {
        #[test]
        fn ebh_is_self_consistent(e in evalue_vec(), alpha in 0.01f64..0.99) {
            let r = ebh(&ev(&e), alpha).unwrap();
            prop_assert_eq!(r.selected.len(), r.tau);
            for (j, &x) in e.iter().enumerate() {
                prop_assert_eq!(r.is_selected(j), within_budget(r.threshold, x));
            }
        }

        #[test]
        fn ebh_monotone_in_alpha(e in evalue_vec(), a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = ebh(&ev(&e), lo).unwrap();
            let large = ebh(&ev(&e), hi).unwrap();
            prop_assert!(small.selected.iter().all(|j| large.is_selected(*j)));
        }

        #[test]
        fn ebh_permutation_equivariant(e in evalue_vec(), seed in any::<u64>(), alpha in 0.01f64..0.99) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..e.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| e[i]).collect();
            let base = ebh(&ev(&e), alpha).unwrap();
            let moved = ebh(&ev(&permuted), alpha).unwrap();
            let mut mapped: Vec<usize> = moved.selected.iter().map(|&k| perm[k]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, base.selected);
        }

        #[test]
        fn boosting_selects_a_superset(e in evalue_vec(), alpha in 0.01f64..0.99, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let plain = ebh(&ev(&e), alpha).unwrap();
            let hete = boost_hete(&ev(&e), alpha, &BoostDraws::sample(e.len(), &mut rng)).unwrap();
            let homo = boost_homo(&ev(&e), alpha, sample_xi(&mut rng)).unwrap();
            prop_assert!(plain.selected.iter().all(|j| hete.is_selected(*j) && homo.is_selected(*j)));
        }
    }
}
