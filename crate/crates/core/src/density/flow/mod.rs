//! Coupling-layer normalizing flow.
//!
//! The model maps data `x` to a standard-normal latent `z` through a fixed
//! standardiser followed by `L` coupling layers with alternating masks. Each
//! coupling layer transforms half of the coordinates element-wise (spline or
//! affine), with parameters produced by a small network reading the other
//! half, so the Jacobian is triangular and its log-determinant is the sum of
//! element-wise log-derivatives. One-dimensional data uses a single
//! unconditional element-wise transform instead.
//!
//! `log p(x) = log N(z; 0, I) + sum of layer log-dets - sum log std`.

mod mlp;
mod train;
mod transform;

pub use mlp::Mlp;
pub use train::{fit_flow, loss_and_gradient, TrainConfig};
pub use transform::{Knots, TransformKind};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use self::mlp::MlpCache;
use self::transform::Element;
use super::{DensityModel, HALF_LN_TAU};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Rows per block when evaluating large batches.
const EVAL_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArchitecture {
    pub dims: usize,
    /// Number of coupling layers (a single element-wise layer when `dims == 1`).
    pub layers: usize,
    pub transform: TransformKind,
    pub hidden: Vec<usize>,
}

impl FlowArchitecture {
    pub fn layer_count(&self) -> usize {
        if self.dims == 1 {
            1
        } else {
            self.layers
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::invalid("flow needs at least one dimension"));
        }
        if self.dims > 1 && self.layers == 0 {
            return Err(Error::invalid("flow needs at least one coupling layer"));
        }
        if let TransformKind::Spline { knots, tail_bound } = self.transform {
            if knots < 2 || !(tail_bound > 0.0) {
                return Err(Error::invalid("spline needs >= 2 knots and a positive bound"));
            }
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Coupling {
        transformed: Vec<usize>,
        conditioning: Vec<usize>,
        net: Mlp,
    },
    /// Unconditional per-dimension parameters, shape `(dims, param_count)`.
    Elementwise { raw: Array2<f64> },
}

pub(crate) struct LayerCache {
    input: Array2<f64>,
    net: Option<MlpCache>,
    params: Array2<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        match self {
            Layer::Coupling {
                transformed,
                conditioning,
                net,
            } => Layer::Coupling {
                transformed: transformed.clone(),
                conditioning: conditioning.clone(),
                net: net.zeros_like(),
            },
            Layer::Elementwise { raw } => Layer::Elementwise {
                raw: Array2::zeros(raw.raw_dim()),
            },
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::Coupling { net, .. } => net.tensors(),
            Layer::Elementwise { raw } => vec![raw.as_slice().expect("standard layout")],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Coupling { net, .. } => net.tensors_mut(),
            Layer::Elementwise { raw } => vec![raw.as_slice_mut().expect("standard layout")],
        }
    }

    /// Per-row transform parameters: conditioner output or the broadcast raw table.
    fn params_for(&self, u: &Array2<f64>) -> (Array2<f64>, Option<MlpCache>, Vec<usize>) {
        match self {
            Layer::Coupling {
                transformed,
                conditioning,
                net,
            } => {
                let xc = u.select(Axis(1), conditioning);
                let (out, cache) = net.forward_cached(xc.view());
                (out, Some(cache), transformed.clone())
            }
            Layer::Elementwise { raw } => {
                let dims = raw.nrows();
                let p = raw.ncols();
                let flat = raw.as_slice().expect("standard layout");
                let out = Array2::from_shape_fn((u.nrows(), dims * p), |(_, j)| flat[j]);
                (out, None, (0..dims).collect())
            }
        }
    }

    fn params_eval(&self, u: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
        match self {
            Layer::Coupling {
                transformed,
                conditioning,
                net,
            } => {
                let xc = u.select(Axis(1), conditioning);
                (net.forward(xc.view()), transformed.clone())
            }
            other => {
                let (p, _, t) = other.params_for(u);
                (p, t)
            }
        }
    }

    /// Data-to-latent pass; adds each row's log-det into `ldj`.
    fn forward(
        &self,
        u: &Array2<f64>,
        ldj: &mut Array1<f64>,
        elem: &mut Element,
        cache: bool,
    ) -> (Array2<f64>, Option<LayerCache>) {
        let (params, net_cache, transformed) = if cache {
            self.params_for(u)
        } else {
            let (p, t) = self.params_eval(u);
            (p, None, t)
        };
        let np = params.ncols() / transformed.len();
        let mut v = u.clone();
        for b in 0..u.nrows() {
            let row = params.row(b);
            let row = row.as_slice().expect("standard layout");
            for (j, &d) in transformed.iter().enumerate() {
                let (y, l) = elem.forward(&row[j * np..(j + 1) * np], u[[b, d]]);
                v[[b, d]] = y;
                ldj[b] += l;
            }
        }
        let cache = cache.then(|| LayerCache {
            input: u.clone(),
            net: net_cache,
            params,
        });
        (v, cache)
    }

    fn backward(
        &self,
        cache: &LayerCache,
        grad_v: Array2<f64>,
        grad_ldj: &Array1<f64>,
        grads: &mut Layer,
        elem: &mut Element,
    ) -> Array2<f64> {
        let u = &cache.input;
        let params = &cache.params;
        let transformed: Vec<usize> = match self {
            Layer::Coupling { transformed, .. } => transformed.clone(),
            Layer::Elementwise { raw } => (0..raw.nrows()).collect(),
        };
        let np = params.ncols() / transformed.len();
        let mut grad_u = grad_v.clone();
        let mut grad_params = Array2::<f64>::zeros(params.raw_dim());
        for b in 0..u.nrows() {
            let prow = params.row(b);
            let prow = prow.as_slice().expect("standard layout");
            let mut grow = grad_params.row_mut(b);
            let grow = grow.as_slice_mut().expect("standard layout");
            for (j, &d) in transformed.iter().enumerate() {
                let span = j * np..(j + 1) * np;
                grad_u[[b, d]] = elem.backward(
                    &prow[span.clone()],
                    u[[b, d]],
                    grad_v[[b, d]],
                    grad_ldj[b],
                    &mut grow[span],
                );
            }
        }
        match (self, grads) {
            (
                Layer::Coupling {
                    conditioning, net, ..
                },
                Layer::Coupling { net: gnet, .. },
            ) => {
                let net_cache = cache.net.as_ref().expect("cached forward");
                let gxc = net.backward(net_cache, grad_params, gnet);
                for (ci, &d) in conditioning.iter().enumerate() {
                    let col = gxc.column(ci);
                    let mut target = grad_u.column_mut(d);
                    target += &col;
                }
            }
            (Layer::Elementwise { .. }, Layer::Elementwise { raw: graw }) => {
                let summed = grad_params.sum_axis(Axis(0));
                let flat = graw.as_slice_mut().expect("standard layout");
                for (g, s) in flat.iter_mut().zip(summed.iter()) {
                    *g += s;
                }
            }
            _ => unreachable!("gradient buffer mirrors the model"),
        }
        grad_u
    }

    /// Latent-to-data pass for this layer.
    fn inverse(&self, v: &Array2<f64>, elem: &mut Element) -> Array2<f64> {
        // conditioning coordinates pass through unchanged, so parameters can
        // be recomputed from the output side
        let (params, transformed) = self.params_eval(v);
        let np = params.ncols() / transformed.len();
        let mut u = v.clone();
        for b in 0..v.nrows() {
            let row = params.row(b);
            let row = row.as_slice().expect("standard layout");
            for (j, &d) in transformed.iter().enumerate() {
                u[[b, d]] = elem.inverse(&row[j * np..(j + 1) * np], v[[b, d]]).0;
            }
        }
        u
    }
}

/// All trainable parameters of a flow (also used as the gradient buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub layers: Vec<Layer>,
}

impl FlowParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &FlowParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.count(),
                values.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDensity {
    arch: FlowArchitecture,
    mean: Vec<f64>,
    std: Vec<f64>,
    params: FlowParams,
    trained_on: usize,
}

/// Mean and (population) standard deviation per column; zero deviations become 1.
pub fn standardizer(data: &crate::data::Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.rows() as f64;
    let dims = data.dims();
    let mut mean = vec![0.0; dims];
    for row in data.iter_rows() {
        for d in 0..dims {
            mean[d] += row[d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dims];
    for row in data.iter_rows() {
        for d in 0..dims {
            var[d] += (row[d] - mean[d]).powi(2);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl FlowDensity {
    /// Fresh flow. With `output_scale == 0` every conditioner outputs zero and
    /// the flow reduces to the standardiser; a positive scale gives random
    /// non-trivial layers.
    pub fn new(
        arch: FlowArchitecture,
        mean: Vec<f64>,
        std: Vec<f64>,
        seed: u64,
        output_scale: f64,
    ) -> Result<Self> {
        arch.validate()?;
        if mean.len() != arch.dims || std.len() != arch.dims || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standardiser does not match the architecture"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng::key(seed, Stream::Init, &[]));
        let np = arch.transform.param_count();
        let layers = if arch.dims == 1 {
            let raw = Array2::from_shape_fn((1, np), |_| {
                output_scale * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)
            });
            vec![Layer::Elementwise { raw }]
        } else {
            (0..arch.layers)
                .map(|l| {
                    let (transformed, conditioning): (Vec<usize>, Vec<usize>) =
                        (0..arch.dims).partition(|d| d % 2 == l % 2);
                    let mut sizes = vec![conditioning.len()];
                    sizes.extend(&arch.hidden);
                    sizes.push(transformed.len() * np);
                    Layer::Coupling {
                        net: Mlp::new(&sizes, output_scale, &mut rng),
                        transformed,
                        conditioning,
                    }
                })
                .collect()
        };
        Ok(Self {
            arch,
            mean,
            std,
            params: FlowParams { layers },
            trained_on: 0,
        })
    }

    pub fn architecture(&self) -> &FlowArchitecture {
        &self.arch
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FlowParams {
        &mut self.params
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub(crate) fn set_trained_on(&mut self, m: usize) {
        self.trained_on = m;
    }

    /// `-sum log std`, the log-det of the standardiser.
    pub fn standardizer_logdet(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }

    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut u = x.to_owned();
        for mut row in u.rows_mut() {
            for d in 0..self.arch.dims {
                row[d] = (row[d] - self.mean[d]) / self.std[d];
            }
        }
        u
    }

    fn element(&self) -> Element {
        Element::new(self.arch.transform)
    }

    /// Latent codes and per-layer log-determinants of the data-to-latent map.
    /// The standardiser log-det is not included in the per-layer values.
    pub fn to_latent_traced(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array1<f64>>) {
        let mut u = self.standardize(x);
        let mut elem = self.element();
        let mut per_layer = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let mut ldj = Array1::zeros(u.nrows());
            u = layer.forward(&u, &mut ldj, &mut elem, false).0;
            per_layer.push(ldj);
        }
        (u, per_layer)
    }

    /// `G^-1(x)` and `log |det dG^-1/dx|` (standardiser included).
    pub fn to_latent(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
        let mut u = self.standardize(x);
        let mut elem = self.element();
        let mut ldj = Array1::from_elem(u.nrows(), self.standardizer_logdet());
        for layer in &self.params.layers {
            u = layer.forward(&u, &mut ldj, &mut elem, false).0;
        }
        (u, ldj)
    }

    /// Single-point version of [`FlowDensity::to_latent`].
    pub fn inverse_and_logdet(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row has model dims");
        let (z, ldj) = self.to_latent(view);
        (z.into_raw_vec_and_offset().0, ldj[0])
    }

    /// Generative direction `G(z)`.
    pub fn from_latent(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut elem = self.element();
        let mut v = z.to_owned();
        for layer in self.params.layers.iter().rev() {
            v = layer.inverse(&v, &mut elem);
        }
        for mut row in v.rows_mut() {
            for d in 0..self.arch.dims {
                row[d] = row[d] * self.std[d] + self.mean[d];
            }
        }
        v
    }

    fn log_density_block(&self, x: ArrayView2<'_, f64>, out: &mut [f64]) {
        let (z, ldj) = self.to_latent(x);
        let dims = self.arch.dims as f64;
        for ((o, zr), l) in out.iter_mut().zip(z.rows()) .zip(ldj.iter()) {
            let sq: f64 = zr.iter().map(|v| v * v).sum();
            *o = -0.5 * sq - dims * HALF_LN_TAU + l;
        }
    }

    /// Training-time forward pass keeping every layer's cache.
    pub(crate) fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
        elem: &mut Element,
    ) -> (Array2<f64>, Array1<f64>, Vec<LayerCache>) {
        let mut u = self.standardize(x);
        let mut ldj = Array1::zeros(u.nrows());
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let (v, c) = layer.forward(&u, &mut ldj, elem, true);
            caches.push(c.expect("cache requested"));
            u = v;
        }
        (u, ldj, caches)
    }

    pub(crate) fn backward_cached(
        &self,
        caches: &[LayerCache],
        grad_z: Array2<f64>,
        grad_ldj: &Array1<f64>,
        grads: &mut FlowParams,
        elem: &mut Element,
    ) {
        let mut g = grad_z;
        for ((layer, cache), glayer) in self
            .params
            .layers
            .iter()
            .zip(caches)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = layer.backward(cache, g, grad_ldj, glayer, elem);
        }
    }
}

impl DensityModel for FlowDensity {
    fn dims(&self) -> usize {
        self.arch.dims
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut out = [0.0];
        self.log_density_batch(x, &mut out);
        out[0]
    }

    fn log_density_batch(&self, rows: &[f64], out: &mut [f64]) {
        let dims = self.arch.dims;
        for (block, o) in rows.chunks(EVAL_BLOCK * dims).zip(out.chunks_mut(EVAL_BLOCK)) {
            let view = ArrayView2::from_shape((block.len() / dims, dims), block)
                .expect("rows are a whole number of points");
            self.log_density_block(view, o);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn arch(dims: usize, transform: TransformKind) -> FlowArchitecture {
        FlowArchitecture {
            dims,
            layers: 4,
            transform,
            hidden: vec![16, 16],
        }
    }

    const SPLINE: TransformKind = TransformKind::Spline {
        knots: 8,
        tail_bound: 4.0,
    };

    fn points(n: usize, dims: usize, seed: u64, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, dims), |(i, d)| {
            scale * rng::normal(seed, Stream::Generate, &[i as u64, d as u64])
        })
    }

    #[test]
    fn identity_flow_is_the_standardiser() {
        let mean = vec![1.0, -2.0];
        let std = vec![2.0, 0.5];
        let f = FlowDensity::new(arch(2, SPLINE), mean.clone(), std.clone(), 0, 0.0).unwrap();
        let expected = -2.0 * HALF_LN_TAU - (2.0f64.ln() + 0.5f64.ln());
        assert!((f.log_density(&mean) - expected).abs() < 1e-12);
        let x = points(20, 2, 1, 2.0);
        let (z, per_layer) = f.to_latent_traced(x.view());
        for (zr, xr) in z.rows().into_iter().zip(x.rows()) {
            for d in 0..2 {
                assert!((zr[d] - (xr[d] - mean[d]) / std[d]).abs() < 1e-12);
            }
        }
        assert!(per_layer.iter().all(|l| l.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn total_logdet_is_sum_of_layers() {
        let f = FlowDensity::new(arch(3, SPLINE), vec![0.0; 3], vec![1.5; 3], 4, 0.5).unwrap();
        let x = points(50, 3, 2, 1.0);
        let (z1, per_layer) = f.to_latent_traced(x.view());
        let (z2, total) = f.to_latent(x.view());
        assert_eq!(z1, z2);
        for i in 0..50 {
            let sum: f64 = f.standardizer_logdet() + per_layer.iter().map(|l| l[i]).sum::<f64>();
            assert!((sum - total[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_recovers_inputs() {
        for (dims, kind) in [(1, SPLINE), (2, SPLINE), (3, SPLINE), (2, TransformKind::Affine)] {
            let f = FlowDensity::new(arch(dims, kind), vec![0.3; dims], vec![1.1; dims], 7, 0.8)
                .unwrap();
            let x = points(1000, dims, 3, 1.2);
            let (z, _) = f.to_latent(x.view());
            let back = f.from_latent(z.view());
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-8, "dims {dims}: {err}");
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        let f = FlowDensity::new(arch(2, SPLINE), vec![0.0; 2], vec![1.0; 2], 11, 0.8).unwrap();
        let h = 1e-5;
        let x = points(100, 2, 5, 1.0);
        for row in x.rows() {
            let p = [row[0], row[1]];
            let (_, ldj) = f.inverse_and_logdet(&p);
            let mut jac = [[0.0; 2]; 2];
            for c in 0..2 {
                let mut up = p;
                up[c] += h;
                let mut dn = p;
                dn[c] -= h;
                let (zu, _) = f.inverse_and_logdet(&up);
                let (zd, _) = f.inverse_and_logdet(&dn);
                for r in 0..2 {
                    jac[r][c] = (zu[r] - zd[r]) / (2.0 * h);
                }
            }
            let det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
            assert!((ldj.exp() - det).abs() <= 1e-4 * det, "{} vs {det}", ldj.exp());
        }
    }

    #[test]
    fn batch_and_single_point_agree() {
        let f = FlowDensity::new(arch(2, SPLINE), vec![0.0; 2], vec![1.0; 2], 2, 0.5).unwrap();
        let x = points(2500, 2, 8, 1.5);
        let flat = x.as_slice().unwrap();
        let mut out = vec![0.0; 2500];
        f.log_density_batch(flat, &mut out);
        for i in [0, 1023, 1024, 2499] {
            assert!((out[i] - f.log_density(x.row(i).as_slice().unwrap())).abs() < 1e-12);
        }
    }
}
