//! Acceptance scores and calibration of the acceptance constant.
//!
//! A point with density `p` gets raw score `s = 1 / max(p, eps)` and
//! acceptance probability `min(alpha * s, 1)`. Scores and `alpha` are held
//! as logs, so neither tiny densities nor products of many iterations
//! overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density floor used when the model reports none (`log` of ~1e-300).
pub const LOG_DENSITY_EPS: f64 = -690.0;

/// Default tolerance on the expected count.
pub const DEFAULT_TOLERANCE: f64 = 0.5;

/// Log raw score `-max(log p, log floor)` for each log-density.
pub fn log_scores(log_density: &[f64], log_floor: f64) -> Vec<f64> {
    let floor = log_floor.max(LOG_DENSITY_EPS);
    log_density
        .iter()
        .map(|&lp| if lp.is_nan() { -floor } else { -lp.max(floor) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    /// Exact solution from the sorted scores.
    #[default]
    ClosedForm,
    /// Bisection on `log alpha`.
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `log alpha` in the units of the input log scores.
    pub log_alpha: f64,
    /// Expected selected count `(N / N') sum min(alpha s_i, 1)` at `log_alpha`.
    pub expected: f64,
    /// Fraction of the calibration scores with `alpha s_i >= 1`.
    pub clipped_fraction: f64,
    pub method: CalibrationMethod,
}

impl Calibration {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn probability(&self, log_score: f64) -> f64 {
        (self.log_alpha + log_score).exp().min(1.0)
    }

    pub fn probabilities(&self, log_scores: &[f64]) -> Vec<f64> {
        log_scores.iter().map(|&s| self.probability(s)).collect()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Calibration problem in log space: find `a = log alpha` with
/// `scale * sum_i min(exp(a + l_i), 1) = target`.
struct Problem<'a> {
    scores: &'a [f64],
    scale: f64,
    target: f64,
}

impl<'a> Problem<'a> {
    fn new(scores: &'a [f64], total: usize, target: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("calibration needs at least one score"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("acceptance scores must be finite"));
        }
        if total < scores.len() {
            return Err(Error::invalid("total row count is below the calibration sample"));
        }
        if !(target > 0.0) || !target.is_finite() {
            return Err(Error::invalid("target count must be positive"));
        }
        if target > total as f64 {
            return Err(Error::AllPointsSelected {
                target,
                available: total,
            });
        }
        Ok(Self {
            scores,
            scale: total as f64 / scores.len() as f64,
            target,
        })
    }

    fn expected(&self, log_alpha: f64) -> f64 {
        self.scale
            * self
                .scores
                .iter()
                .map(|&l| (log_alpha + l).exp().min(1.0))
                .sum::<f64>()
    }

    /// Smallest `log alpha` at which every point is saturated.
    fn saturation(&self) -> f64 {
        -self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn closed_form(&self) -> f64 {
        if self.target >= self.scale * self.scores.len() as f64 {
            return self.saturation();
        }
        let mut sorted = self.scores.to_vec();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let need = self.target / self.scale;
        // log of the suffix sums of exp(score)
        let mut tail = vec![f64::NEG_INFINITY; sorted.len() + 1];
        for k in (0..sorted.len()).rev() {
            tail[k] = log_add(tail[k + 1], sorted[k]);
        }
        // with the top k saturated: k + alpha * sum_{j >= k} s_j = need
        for k in 0..sorted.len() {
            let rest = need - k as f64;
            if !(rest > 0.0) {
                break;
            }
            let a = rest.ln() - tail[k];
            let lower_ok = k == 0 || a + sorted[k - 1] >= 0.0;
            if lower_ok && a + sorted[k] <= 0.0 {
                return a;
            }
        }
        // numerical corner: fall back to the search
        self.bisect()
    }

    fn bisect(&self) -> f64 {
        let log_sum = self.scores.iter().fold(f64::NEG_INFINITY, |acc, &l| log_add(acc, l));
        let mut lo = (self.target / self.scale).ln() - log_sum;
        let mut hi = self.saturation().max(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.expected(mid) < self.target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Finds `alpha` such that `(total / N') sum_{i < N'} min(alpha s_i, 1) = target`
/// over the calibration log scores.
///
/// Fails with [`Error::AllPointsSelected`] when `target > total`.
pub fn calibrate_alpha(
    log_scores: &[f64],
    total: usize,
    target: f64,
    method: CalibrationMethod,
) -> Result<Calibration> {
    let problem = Problem::new(log_scores, total, target)?;
    let log_alpha = match method {
        CalibrationMethod::ClosedForm => problem.closed_form(),
        CalibrationMethod::Bisection => problem.bisect(),
    };
    let clipped = log_scores.iter().filter(|&&l| log_alpha + l >= 0.0).count();
    Ok(Calibration {
        log_alpha,
        expected: problem.expected(log_alpha),
        clipped_fraction: clipped as f64 / log_scores.len() as f64,
        method,
    })
}

/// Expected count implied by `log_alpha` over the calibration scores.
pub fn expected_count(log_scores: &[f64], total: usize, log_alpha: f64) -> f64 {
    let scale = total as f64 / log_scores.len() as f64;
    scale
        * log_scores
            .iter()
            .map(|&s| (log_alpha + s).exp().min(1.0))
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_scores_give_n_over_total() {
        let scores = vec![0.0; 1000];
        let c = calibrate_alpha(&scores, 1000, 100.0, CalibrationMethod::ClosedForm).unwrap();
        assert!((c.alpha() - 0.1).abs() < 1e-12);
        assert_eq!(c.clipped_fraction, 0.0);
    }

    #[test]
    fn hand_worked_saturation() {
        // densities 1, 1/2, 1/4, 1/8 -> scores 1, 2, 4, 8; target 2.5
        // saturating the top point: 1 + alpha (1 + 2 + 4) = 2.5 -> alpha = 3/14
        let scores: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|s| s.ln()).collect();
        for m in [CalibrationMethod::ClosedForm, CalibrationMethod::Bisection] {
            let c = calibrate_alpha(&scores, 4, 2.5, m).unwrap();
            assert!((c.alpha() - 3.0 / 14.0).abs() < 1e-12, "{m:?}: {}", c.alpha());
            assert!((c.expected - 2.5).abs() < 1e-9);
            assert_eq!(c.clipped_fraction, 0.25);
        }
    }

    #[test]
    fn target_above_total_is_an_error() {
        let err = calibrate_alpha(&[0.0, 1.0], 2, 3.0, CalibrationMethod::ClosedForm).unwrap_err();
        assert_eq!(err.code(), "all_points_selected");
    }

    #[test]
    fn target_equal_total_saturates() {
        let scores = [0.0, 1.0, 2.0];
        let c = calibrate_alpha(&scores, 3, 3.0, CalibrationMethod::ClosedForm).unwrap();
        assert!(c.probabilities(&scores).iter().all(|&p| p == 1.0));
    }

    #[test]
    fn extreme_scores_do_not_overflow() {
        let scores = [800.0, 0.0, -900.0, 5.0];
        let c = calibrate_alpha(&scores, 4, 1.5, CalibrationMethod::ClosedForm).unwrap();
        assert!(c.log_alpha.is_finite());
        assert!((c.expected - 1.5).abs() < 1e-9);
    }

    #[test]
    fn floor_caps_scores() {
        let s = log_scores(&[-1.0, f64::NEG_INFINITY, -50.0], -10.0);
        assert_eq!(s, vec![1.0, 10.0, 10.0]);
    }

    proptest! {
        #[test]
        fn both_routes_hit_the_target(
            scores in prop::collection::vec(-20.0f64..20.0, 1..300),
            extra in 0usize..5000,
            frac in 0.001f64..1.0,
        ) {
            let total = scores.len() + extra;
            let target = (frac * total as f64).max(0.5);
            let a = calibrate_alpha(&scores, total, target, CalibrationMethod::ClosedForm).unwrap();
            let b = calibrate_alpha(&scores, total, target, CalibrationMethod::Bisection).unwrap();
            prop_assert!((a.expected - target).abs() <= DEFAULT_TOLERANCE);
            prop_assert!((b.expected - target).abs() <= DEFAULT_TOLERANCE);
            prop_assert!((expected_count(&scores, total, a.log_alpha) - target).abs() <= DEFAULT_TOLERANCE);
            for &s in &scores {
                let p = a.probability(s);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn probabilities_decrease_with_density(
            mut scores in prop::collection::vec(-10.0f64..10.0, 2..100),
        ) {
            scores.sort_by(f64::total_cmp);
            let c = calibrate_alpha(&scores, scores.len(), 1.0, CalibrationMethod::ClosedForm).unwrap();
            let p = c.probabilities(&scores);
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
