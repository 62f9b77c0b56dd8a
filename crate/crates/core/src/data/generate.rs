//! Seeded synthetic datasets.
//!
//! Each entry is a pure function of `(spec, seed, row, column)`, so generation
//! order never changes the output.

use serde::{Deserialize, Serialize};

use super::{default_names, Dataset};
use crate::density::AnalyticDensity;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
        rows: usize,
    },
    Mixture {
        components: Vec<GaussianComponent>,
        rows: usize,
    },
    /// Two features from the 2D surrogate mixture plus a label column
    /// `10 cos(w1 f1) sin(w2 f2) + noise`.
    SinusoidLabeled { rows: usize, noise: f64 },
}

impl GeneratorSpec {
    /// Bivariate normal with mean `[1, 1]` and covariance `diag([1, 2])`.
    pub fn bivariate_normal(rows: usize) -> Self {
        GeneratorSpec::Gaussian {
            mean: vec![1.0, 1.0],
            var: vec![1.0, 2.0],
            rows,
        }
    }

    /// Three-mode Gaussian mixture (weights 0.7 / 0.25 / 0.05) in 1 to 5
    /// dimensions, with a tight rare mode away from the bulk.
    pub fn surrogate(dims: usize, rows: usize) -> Self {
        const BULK: [f64; 5] = [0.0, 0.0, 0.0, 0.0, 0.0];
        const SIDE: [f64; 5] = [3.0, 2.0, -1.0, 1.0, 0.5];
        const RARE: [f64; 5] = [-2.5, 4.0, 2.0, -2.0, 1.5];
        let dims = dims.clamp(1, 5);
        let comp = |weight, mean: &[f64; 5], var: f64| GaussianComponent {
            weight,
            mean: mean[..dims].to_vec(),
            var: vec![var; dims],
        };
        GeneratorSpec::Mixture {
            components: vec![
                comp(0.7, &BULK, 1.0),
                comp(0.25, &SIDE, 0.3),
                comp(0.05, &RARE, 0.1),
            ],
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            GeneratorSpec::Gaussian { rows, .. }
            | GeneratorSpec::Mixture { rows, .. }
            | GeneratorSpec::SinusoidLabeled { rows, .. } => *rows,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            GeneratorSpec::Gaussian { mean, .. } => mean.len(),
            GeneratorSpec::Mixture { components, .. } => {
                components.first().map_or(0, |c| c.mean.len())
            }
            GeneratorSpec::SinusoidLabeled { .. } => 3,
        }
    }

    /// Exact density of the feature distribution, where one exists.
    pub fn density(&self) -> Option<AnalyticDensity> {
        match self {
            GeneratorSpec::Gaussian { mean, var, .. } => Some(AnalyticDensity::gaussian(
                mean.clone(),
                var.clone(),
            )),
            GeneratorSpec::Mixture { components, .. } => {
                Some(AnalyticDensity::mixture(components.clone()))
            }
            GeneratorSpec::SinusoidLabeled { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows() == 0 {
            return Err(Error::invalid("generator needs at least one row"));
        }
        let check_comp = |mean: &[f64], var: &[f64]| -> Result<()> {
            if mean.is_empty() || mean.len() != var.len() {
                return Err(Error::invalid("mean and variance lengths differ"));
            }
            if var.iter().any(|&v| !(v >= 0.0) || !v.is_finite())
                || mean.iter().any(|m| !m.is_finite())
            {
                return Err(Error::invalid("variances must be finite and non-negative"));
            }
            Ok(())
        };
        match self {
            GeneratorSpec::Gaussian { mean, var, .. } => check_comp(mean, var),
            GeneratorSpec::Mixture { components, .. } => {
                if components.is_empty() {
                    return Err(Error::invalid("mixture has no components"));
                }
                let dims = components[0].mean.len();
                for c in components {
                    check_comp(&c.mean, &c.var)?;
                    if c.mean.len() != dims || !(c.weight >= 0.0) {
                        return Err(Error::invalid("inconsistent mixture component"));
                    }
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            GeneratorSpec::SinusoidLabeled { noise, .. } => {
                if !(*noise >= 0.0) || !noise.is_finite() {
                    return Err(Error::invalid("noise level must be non-negative"));
                }
                Ok(())
            }
        }
    }
}

/// `10 cos(w1 (f1 - o1)) sin(w2 (f2 - o2))`, with the frequencies chosen so
/// that 2.5 and 1.5 periods span the feature extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidField {
    pub origin: [f64; 2],
    pub omega: [f64; 2],
}

impl SinusoidField {
    pub const AMPLITUDE: f64 = 10.0;
    pub const PERIODS: [f64; 2] = [2.5, 1.5];

    pub fn spanning(min: [f64; 2], max: [f64; 2]) -> Self {
        let omega = [0, 1].map(|d| {
            let extent = max[d] - min[d];
            if extent > 0.0 {
                std::f64::consts::TAU * Self::PERIODS[d] / extent
            } else {
                0.0
            }
        });
        Self { origin: min, omega }
    }

    pub fn eval(&self, f1: f64, f2: f64) -> f64 {
        let a = self.omega[0] * (f1 - self.origin[0]);
        let b = self.omega[1] * (f2 - self.origin[1]);
        Self::AMPLITUDE * a.cos() * b.sin()
    }
}

pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    match spec {
        GeneratorSpec::Gaussian { mean, var, rows } => {
            let comp = GaussianComponent {
                weight: 1.0,
                mean: mean.clone(),
                var: var.clone(),
            };
            mixture(std::slice::from_ref(&comp), *rows, seed)
                .map(|d| d.with_source(format!("gaussian(seed={seed})")))
        }
        GeneratorSpec::Mixture { components, rows } => {
            mixture(components, *rows, seed).map(|d| d.with_source(format!("mixture(seed={seed})")))
        }
        GeneratorSpec::SinusoidLabeled { rows, noise } => sinusoid(*rows, *noise, seed),
    }
}

fn mixture(components: &[GaussianComponent], rows: usize, seed: u64) -> Result<Dataset> {
    let dims = components[0].mean.len();
    let mut cumulative = Vec::with_capacity(components.len());
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let std: Vec<Vec<f64>> = components
        .iter()
        .map(|c| c.var.iter().map(|v| v.sqrt()).collect())
        .collect();
    let mut values = Vec::with_capacity(rows * dims);
    for i in 0..rows as u64 {
        let u = rng::uniform(seed, Stream::Component, &[i]) * acc;
        let k = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(components.len() - 1);
        for d in 0..dims {
            let z = rng::normal(seed, Stream::Generate, &[i, d as u64]);
            values.push(components[k].mean[d] + std[k][d] * z);
        }
    }
    Dataset::new(values, dims, default_names(dims))
}

/// Mixture component index of each generated row (same draws as `generate`).
pub fn mixture_labels(components: &[GaussianComponent], rows: usize, seed: u64) -> Vec<usize> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    (0..rows as u64)
        .map(|i| {
            let u = rng::uniform(seed, Stream::Component, &[i]) * total;
            let mut acc = 0.0;
            for (k, c) in components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    return k;
                }
            }
            components.len() - 1
        })
        .collect()
}

fn sinusoid(rows: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let features = generate(&GeneratorSpec::surrogate(2, rows), seed)?;
    let (min, max) = features.bounds();
    let field = SinusoidField::spanning([min[0], min[1]], [max[0], max[1]]);
    let mut values = Vec::with_capacity(rows * 3);
    for (i, row) in features.iter_rows().enumerate() {
        let eta = noise * rng::normal(seed, Stream::Generate, &[i as u64, 2]);
        values.extend_from_slice(row);
        values.push(field.eval(row[0], row[1]) + eta);
    }
    Ok(
        Dataset::new(values, 3, vec!["f1".into(), "f2".into(), "label".into()])?
            .with_source(format!("sinusoid(seed={seed}, noise={noise})")),
    )
}
