//! Quality metrics for reduced datasets.

mod kdtree;

pub use kdtree::{brute_force_neighbors, nearest_neighbors, NNIndex, Neighbor, DEFAULT_LEAF_SIZE};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fit_rescaler, Dataset, ScalingTransform};
use crate::error::{Error, Result};

/// Target range of the criterion's rescaling.
pub const CRITERION_RANGE: (f64, f64) = (-4.0, 4.0);

/// Default number of bins of the conditional error curve.
pub const DEFAULT_ERROR_BINS: usize = 20;

/// Mean distance from each point to its nearest distinct-index neighbour.
/// With `rescale`, each dimension is first mapped to `[-4, 4]` using the
/// points' own extent.
pub fn distance_criterion(points: &Dataset, rescale: bool) -> Result<f64> {
    if rescale {
        let t = fit_rescaler(points, CRITERION_RANGE.0, CRITERION_RANGE.1)?;
        distance_criterion_with(points, &t)
    } else {
        mean_nn_distance(points)
    }
}

/// Criterion after applying a given rescaler (typically fit on the parent dataset).
pub fn distance_criterion_with(points: &Dataset, transform: &ScalingTransform) -> Result<f64> {
    mean_nn_distance(&transform.apply(points)?)
}

fn mean_nn_distance(points: &Dataset) -> Result<f64> {
    let nn = nearest_neighbors(points)?;
    Ok(nn.iter().map(|n| n.distance).sum::<f64>() / nn.len() as f64)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Estimated-vs-exact acceptance errors, binned by the exact probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalErrorCurve {
    pub bin_centers: Vec<f64>,
    pub bin_width: f64,
    /// Mean of `|est - exact| / exact`; `None` for empty bins.
    pub rel_err: Vec<Option<f64>>,
    /// Mean of `|est - exact|`; `None` for empty bins.
    pub abs_err: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl ConditionalErrorCurve {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean relative error over the bins whose centres lie in
    /// the top `fraction` of the observed exact-probability range.
    pub fn top_range_rel_err(&self, fraction: f64) -> Option<f64> {
        let bins = self.bin_centers.len();
        let keep = ((fraction * bins as f64).round() as usize).clamp(1, bins);
        let mut sum = 0.0;
        let mut count = 0;
        for b in bins - keep..bins {
            if let Some(e) = self.rel_err[b] {
                sum += e * self.counts[b] as f64;
                count += self.counts[b];
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("bin_center,rel_err,abs_err,count\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for b in 0..self.bin_centers.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_centers[b],
                cell(self.rel_err[b]),
                cell(self.abs_err[b]),
                self.counts[b]
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Bins `|estimated - exact|` by `exact` over `bins` equal-width bins spanning
/// the observed range of `exact`.
pub fn conditional_acceptance_error(exact: &[f64], estimated: &[f64], bins: usize) -> Result<ConditionalErrorCurve> {
    if exact.len() != estimated.len() || exact.is_empty() {
        return Err(Error::invalid("exact and estimated probabilities must be non-empty and equal length"));
    }
    if bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if exact.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("exact probabilities must be positive"));
    }
    let lo = exact.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = exact.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
    let mut rel = vec![0.0; bins];
    let mut abs = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&s, &e) in exact.iter().zip(estimated) {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        let a = (e - s).abs();
        abs[b] += a;
        rel[b] += a / s;
        counts[b] += 1;
    }
    let mean = |v: &[f64]| -> Vec<Option<f64>> {
        v.iter()
            .zip(&counts)
            .map(|(&x, &c)| (c > 0).then(|| x / c as f64))
            .collect()
    };
    Ok(ConditionalErrorCurve {
        bin_centers: (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect(),
        bin_width: width,
        rel_err: mean(&rel),
        abs_err: mean(&abs),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_worked_criterion() {
        let d = Dataset::from_values(vec![0.0, 1.0, 3.0], 1).unwrap();
        assert!((distance_criterion(&d, false).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((distance_criterion(&d, true).unwrap() - 32.0 / 9.0).abs() < 1e-12);
        let two = Dataset::from_values(vec![0.0, 0.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(distance_criterion(&two, false).unwrap(), 5.0);
    }

    #[test]
    fn exact_estimate_has_zero_error() {
        let p: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let c = conditional_acceptance_error(&p, &p, 20).unwrap();
        assert_eq!(c.total(), 100);
        assert!(c.rel_err.iter().flatten().all(|&e| e == 0.0));
    }

    #[test]
    fn empty_bins_are_missing() {
        let exact = [0.1, 0.1, 1.0];
        let est = [0.2, 0.1, 0.5];
        let c = conditional_acceptance_error(&exact, &est, 4).unwrap();
        assert_eq!(c.counts, vec![2, 0, 0, 1]);
        assert_eq!(c.rel_err[1], None);
        assert!((c.rel_err[0].unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(c.abs_err[3], Some(0.5));
        assert_eq!(c.top_range_rel_err(0.5), Some(0.5));
    }

    #[test]
    fn csv_has_blank_cells_for_empty_bins() {
        let c = conditional_acceptance_error(&[0.1, 1.0], &[0.1, 1.0], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("bin_center,rel_err,abs_err,count\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",,,0"));
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn criterion_invariances(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..60),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
            rot in 0usize..60,
        ) {
            let flat: Vec<f64> = pts.iter().flat_map(|&(a, b)| [a, b]).collect();
            let base = distance_criterion(&Dataset::from_values(flat.clone(), 2).unwrap(), false).unwrap();
            let mut rotated = pts.clone();
            rotated.rotate_left(rot % pts.len());
            let r: Vec<f64> = rotated.iter().flat_map(|&(a, b)| [a, b]).collect();
            let perm = distance_criterion(&Dataset::from_values(r, 2).unwrap(), false).unwrap();
            prop_assert!((perm - base).abs() <= 1e-9 * base.max(1.0));
            let moved: Vec<f64> = flat.iter().map(|v| v + shift).collect();
            let t = distance_criterion(&Dataset::from_values(moved, 2).unwrap(), false).unwrap();
            prop_assert!((t - base).abs() <= 1e-9 * base.max(1.0));
            let scaled: Vec<f64> = flat.iter().map(|v| v * scale).collect();
            let s = distance_criterion(&Dataset::from_values(scaled, 2).unwrap(), false).unwrap();
            prop_assert!((s - scale * base).abs() <= 1e-9 * (scale * base).max(1.0));
        }

        #[test]
        fn curve_conserves_counts(
            exact in prop::collection::vec(0.001f64..1.0, 1..200),
            bins in 1usize..30,
        ) {
            let est: Vec<f64> = exact.iter().map(|p| (p * 1.3).min(1.0)).collect();
            let c = conditional_acceptance_error(&exact, &est, bins).unwrap();
            prop_assert_eq!(c.total(), exact.len());
        }
    }
}
