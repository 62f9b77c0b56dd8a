//! Density estimators and the common evaluation interface.

mod checkpoint;
pub mod flow;
pub mod histogram;

pub use checkpoint::{load_model, save_model, FLOW_MAGIC, HISTOGRAM_MAGIC};
pub use flow::{fit_flow, FlowArchitecture, FlowDensity, TrainConfig, TransformKind};
pub use histogram::{dense_bytes, fit_histogram, HistogramDensity, DEFAULT_MEMORY_CAP};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GaussianComponent};
use crate::error::Result;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// Rows per parallel evaluation chunk in [`mean_nll`].
const NLL_CHUNK: usize = 4096;

/// A (log-)density over `R^D`.
pub trait DensityModel: Sync {
    fn dims(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Row-major batch evaluation; `out.len()` equals the number of rows.
    fn log_density_batch(&self, rows: &[f64], out: &mut [f64]) {
        let d = self.dims();
        for (row, o) in rows.chunks_exact(d).zip(out.iter_mut()) {
            *o = self.log_density(row);
        }
    }

    /// Smallest value `log_density` can return (`-inf` when unbounded).
    fn log_floor(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

/// Closed-form densities of the synthetic generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticDensity {
    /// Diagonal-covariance Gaussian.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    Mixture { components: Vec<GaussianComponent> },
    /// Uniform on an axis-aligned box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

fn diag_gaussian_log(mean: &[f64], var: &[f64], x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&m, &v), &xi) in mean.iter().zip(var).zip(x) {
        acc -= 0.5 * (xi - m) * (xi - m) / v + 0.5 * v.ln() + HALF_LN_TAU;
    }
    acc
}

impl AnalyticDensity {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Self {
        AnalyticDensity::Gaussian { mean, var }
    }

    pub fn mixture(components: Vec<GaussianComponent>) -> Self {
        AnalyticDensity::Mixture { components }
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        AnalyticDensity::Uniform { lower, upper }
    }
}

impl DensityModel for AnalyticDensity {
    fn dims(&self) -> usize {
        match self {
            AnalyticDensity::Gaussian { mean, .. } => mean.len(),
            AnalyticDensity::Mixture { components } => components[0].mean.len(),
            AnalyticDensity::Uniform { lower, .. } => lower.len(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticDensity::Gaussian { mean, var } => diag_gaussian_log(mean, var, x),
            AnalyticDensity::Mixture { components } => {
                let logs: Vec<f64> = components
                    .iter()
                    .filter(|c| c.weight > 0.0)
                    .map(|c| c.weight.ln() + diag_gaussian_log(&c.mean, &c.var, x))
                    .collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            }
            AnalyticDensity::Uniform { lower, upper } => {
                let mut acc = 0.0;
                for ((&lo, &hi), &xi) in lower.iter().zip(upper).zip(x) {
                    if xi < lo || xi > hi {
                        return f64::NEG_INFINITY;
                    }
                    acc -= (hi - lo).ln();
                }
                acc
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Histogram { bins: usize, memory_cap: u64 },
    Flow(TrainConfig),
}

impl EstimatorConfig {
    pub fn histogram(bins: usize) -> Self {
        EstimatorConfig::Histogram {
            bins,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Histogram { .. } => "hist",
            EstimatorConfig::Flow(_) => "flow",
        }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Flow(TrainConfig::default())
    }
}

/// A trained estimator of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Histogram(HistogramDensity),
    Flow(FlowDensity),
}

impl FittedModel {
    pub fn trained_on(&self) -> usize {
        match self {
            FittedModel::Histogram(h) => h.trained_on(),
            FittedModel::Flow(f) => f.trained_on(),
        }
    }
}

impl DensityModel for FittedModel {
    fn dims(&self) -> usize {
        match self {
            FittedModel::Histogram(h) => h.dims(),
            FittedModel::Flow(f) => f.dims(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Histogram(h) => h.log_density(x),
            FittedModel::Flow(f) => f.log_density(x),
        }
    }

    fn log_density_batch(&self, rows: &[f64], out: &mut [f64]) {
        match self {
            FittedModel::Histogram(h) => h.log_density_batch(rows, out),
            FittedModel::Flow(f) => f.log_density_batch(rows, out),
        }
    }

    fn log_floor(&self) -> f64 {
        match self {
            FittedModel::Histogram(h) => h.log_floor(),
            FittedModel::Flow(f) => f.log_floor(),
        }
    }
}

/// Fits the configured estimator on the working set. The second value is
/// the per-step training NLL (empty for histograms).
pub fn fit_estimator(working: &Dataset, config: &EstimatorConfig) -> Result<(FittedModel, Vec<f64>)> {
    match config {
        EstimatorConfig::Histogram { bins, memory_cap } => Ok((
            FittedModel::Histogram(fit_histogram(working, *bins, *memory_cap)?),
            Vec::new(),
        )),
        EstimatorConfig::Flow(tc) => {
            let (f, hist) = fit_flow(working, tc)?;
            Ok((FittedModel::Flow(f), hist))
        }
    }
}

/// Mean negative log-density over all rows of `data`.
pub fn mean_nll<M: DensityModel + ?Sized>(model: &M, data: &Dataset) -> f64 {
    let d = data.dims();
    let sums: Vec<f64> = data
        .values()
        .par_chunks(NLL_CHUNK * d)
        .map(|block| {
            let mut out = vec![0.0; block.len() / d];
            model.log_density_batch(block, &mut out);
            out.iter().sum::<f64>()
        })
        .collect();
    -sums.iter().sum::<f64>() / data.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_matches_closed_form() {
        let g = AnalyticDensity::gaussian(vec![1.0, 1.0], vec![1.0, 2.0]);
        let x = [0.5, 2.0];
        let expected = -(2.0 * std::f64::consts::PI) .ln()
            - 0.5 * 2.0f64.ln()
            - 0.5 * (0.25 + 1.0 / 2.0);
        assert!((g.log_density(&x) - expected).abs() < 1e-14);
    }

    #[test]
    fn mixture_is_weighted_sum() {
        let comps = vec![
            GaussianComponent {
                weight: 0.3,
                mean: vec![0.0],
                var: vec![1.0],
            },
            GaussianComponent {
                weight: 0.7,
                mean: vec![2.0],
                var: vec![0.5],
            },
        ];
        let m = AnalyticDensity::mixture(comps);
        let pdf = |x: f64, mu: f64, v: f64| {
            (-(x - mu) * (x - mu) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        for x in [-1.0, 0.4, 2.2, 5.0] {
            let expected = 0.3 * pdf(x, 0.0, 1.0) + 0.7 * pdf(x, 2.0, 0.5);
            assert!((m.log_density(&[x]).exp() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_box() {
        let u = AnalyticDensity::uniform(vec![0.0, -1.0], vec![2.0, 1.0]);
        assert!((u.log_density(&[1.0, 0.0]) - (0.25f64).ln()).abs() < 1e-15);
        assert_eq!(u.log_density(&[3.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn mean_nll_of_uniform() {
        let d = Dataset::from_values(vec![0.5, 1.0, 1.5, 0.1], 1).unwrap();
        let u = AnalyticDensity::uniform(vec![0.0], vec![2.0]);
        assert!((mean_nll(&u, &d) - 2.0f64.ln()).abs() < 1e-15);
    }
}
