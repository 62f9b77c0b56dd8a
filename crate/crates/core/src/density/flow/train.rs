//! Maximum-likelihood training with Adam.

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transform::Element;
use super::{standardizer, FlowArchitecture, FlowDensity, FlowParams, TransformKind, HALF_LN_TAU};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Rows per gradient chunk. Fixed so the reduction order does not depend on
/// the number of workers.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub layers: usize,
    pub transform: TransformKind,
    pub hidden: Vec<usize>,
    pub steps: usize,
    /// Clamped to the working-set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Overall learning-rate reduction reached at the last step (exponential).
    pub lr_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            transform: TransformKind::Spline {
                knots: 8,
                tail_bound: 4.0,
            },
            hidden: vec![32, 32],
            steps: 12_000,
            batch_size: 1024,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, dims: usize) -> FlowArchitecture {
        FlowArchitecture {
            dims,
            layers: self.layers,
            transform: self.transform,
            hidden: self.hidden.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("training needs at least one step"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::invalid("learning rate and decay must be positive"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of `x` and its gradient.
///
/// Chunks are processed in parallel on the current rayon pool and summed in
/// chunk order, so the result is independent of the worker count.
pub fn loss_and_gradient(model: &FlowDensity, x: ArrayView2<'_, f64>) -> (f64, FlowParams) {
    let n = x.nrows();
    let dims = model.architecture().dims as f64;
    let base = dims * HALF_LN_TAU - model.standardizer_logdet();
    let inv_n = 1.0 / n as f64;
    let chunks: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
    let parts: Vec<(f64, FlowParams)> = chunks
        .par_iter()
        .map(|&start| {
            let end = (start + GRAD_CHUNK).min(n);
            let xb = x.slice(ndarray::s![start..end, ..]);
            let mut elem = Element::new(model.architecture().transform);
            let (z, ldj, caches) = model.forward_cached(xb, &mut elem);
            let mut loss = 0.0;
            for (zr, l) in z.rows().into_iter().zip(ldj.iter()) {
                let sq: f64 = zr.iter().map(|v| v * v).sum();
                loss += 0.5 * sq + base - l;
            }
            let grad_z = z * inv_n;
            let grad_ldj = Array1::from_elem(end - start, -inv_n);
            let mut grads = model.params().zeros_like();
            model.backward_cached(&caches, grad_z, &grad_ldj, &mut grads, &mut elem);
            (loss, grads)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one row");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    (loss * inv_n, grads)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a flow on the working set. Returns the model and the mean batch
/// NLL at every step.
pub fn fit_flow(working: &Dataset, config: &TrainConfig) -> Result<(FlowDensity, Vec<f64>)> {
    config.validate()?;
    let dims = working.dims();
    let (mean, std) = standardizer(working);
    let mut model = FlowDensity::new(config.architecture(dims), mean, std, config.seed, 0.0)?;
    model.set_trained_on(working.rows());
    let rows = working.rows();
    let batch = config.batch_size.min(rows);
    let mut flat = model.params().to_vec();
    let mut adam = Adam::new(flat.len());
    let mut rng = rng::stream(config.seed, Stream::Train, &[rows as u64]);
    let mut buf = vec![0.0; batch * dims];
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        for b in 0..batch {
            let i = rng.random_range(0..rows);
            buf[b * dims..(b + 1) * dims].copy_from_slice(working.row(i));
        }
        let xb = ArrayView2::from_shape((batch, dims), &buf).expect("batch shape");
        let (loss, grads) = loss_and_gradient(&model, xb);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        let mut g = grads.to_vec();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { step });
        }
        if let Some(clip) = config.clip_norm {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        let progress = step as f64 / config.steps.max(1) as f64;
        let lr = config.learning_rate * config.lr_decay.powf(progress);
        adam.step(&mut flat, &g, lr);
        model.params_mut().set_from_slice(&flat)?;
        history.push(loss);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorSpec};
    use crate::density::DensityModel;
    use ndarray::Array2;

    fn small(steps: usize) -> TrainConfig {
        TrainConfig {
            layers: 2,
            hidden: vec![8],
            steps,
            batch_size: 128,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for transform in [
            TransformKind::Affine,
            TransformKind::Spline {
                knots: 5,
                tail_bound: 3.0,
            },
        ] {
            let arch = FlowArchitecture {
                dims: 3,
                layers: 2,
                transform,
                hidden: vec![6],
            };
            let model = FlowDensity::new(arch, vec![0.1; 3], vec![1.3; 3], 5, 0.6).unwrap();
            let x = Array2::from_shape_fn((150, 3), |(i, d)| {
                1.5 * rng::normal(3, Stream::Generate, &[i as u64, d as u64])
            });
            let (_, grads) = loss_and_gradient(&model, x.view());
            let analytic = grads.to_vec();
            let base = model.params().to_vec();
            let h = 1e-6;
            let mut probe = model.clone();
            for p in (0..base.len()).step_by(3) {
                let mut v = base.clone();
                v[p] += h;
                probe.params_mut().set_from_slice(&v).unwrap();
                let up = loss_and_gradient(&probe, x.view()).0;
                v[p] -= 2.0 * h;
                probe.params_mut().set_from_slice(&v).unwrap();
                let dn = loss_and_gradient(&probe, x.view()).0;
                let fd = (up - dn) / (2.0 * h);
                let a = analytic[p];
                let scale = a.abs().max(fd.abs());
                if scale > 1e-8 {
                    assert!((a - fd).abs() / scale < 1e-4, "param {p}: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn loss_matches_log_density() {
        let arch = FlowArchitecture {
            dims: 2,
            layers: 3,
            transform: TrainConfig::default().transform,
            hidden: vec![8],
        };
        let model = FlowDensity::new(arch, vec![0.0; 2], vec![2.0; 2], 1, 0.5).unwrap();
        let x = Array2::from_shape_fn((200, 2), |(i, d)| {
            rng::normal(1, Stream::Generate, &[i as u64, d as u64])
        });
        let (loss, _) = loss_and_gradient(&model, x.view());
        let direct: f64 = x
            .rows()
            .into_iter()
            .map(|r| -model.log_density(r.as_slice().unwrap()))
            .sum::<f64>()
            / 200.0;
        assert!((loss - direct).abs() < 1e-10);
    }

    #[test]
    fn training_reduces_nll_and_is_reproducible() {
        let data = generate(&GeneratorSpec::surrogate(2, 4000), 3).unwrap();
        let (m1, h1) = fit_flow(&data, &small(300)).unwrap();
        let (m2, h2) = fit_flow(&data, &small(300)).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let first: f64 = h1[..20].iter().sum::<f64>() / 20.0;
        let last: f64 = h1[280..].iter().sum::<f64>() / 20.0;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn worker_count_does_not_change_training() {
        let data = generate(&GeneratorSpec::bivariate_normal(1000), 8).unwrap();
        let run = |w| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .unwrap()
                .install(|| fit_flow(&data, &small(40)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn one_dimensional_training_works() {
        let data = generate(&GeneratorSpec::surrogate(1, 2000), 4).unwrap();
        let (model, hist) = fit_flow(&data, &small(200)).unwrap();
        assert_eq!(model.architecture().layer_count(), 1);
        assert!(hist.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tiny_working_set_clamps_batch() {
        let data = Dataset::from_values(vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.5], 2).unwrap();
        let (_, hist) = fit_flow(&data, &small(5)).unwrap();
        assert_eq!(hist.len(), 5);
    }
}
