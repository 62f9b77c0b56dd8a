//! Fully connected conditioner network with tanh hidden activations.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `weights[l]` has shape `(fan_in, fan_out)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Post-activation outputs of every layer, kept for the backward pass.
pub struct MlpCache {
    activations: Vec<Array2<f64>>,
}

impl Mlp {
    /// Glorot-uniform hidden layers. The output layer is scaled by
    /// `output_scale` (zero gives a network whose output is identically zero).
    pub fn new(sizes: &[usize], output_scale: f64, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        let last = sizes.len() - 2;
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l == last { output_scale } else { 1.0 };
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                scale * limit * (2.0 * rng.random::<f64>() - 1.0)
            });
            let b = if l == last && output_scale != 0.0 {
                Array1::from_shape_fn(fan_out, |_| output_scale * (2.0 * rng.random::<f64>() - 1.0))
            } else {
                Array1::zeros(fan_out)
            };
            weights.push(w);
            biases.push(b);
        }
        Self { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].nrows()];
        s.extend(self.weights.iter().map(|w| w.ncols()));
        s
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = input.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = h.dot(w);
            a += b;
            if l < last {
                a.mapv_inplace(f64::tanh);
            }
            h = a;
        }
        h
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut activations = Vec::with_capacity(self.weights.len());
        activations.push(input.to_owned());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = activations[l].dot(w);
            a += b;
            if l < last {
                a.mapv_inplace(f64::tanh);
                activations.push(a);
            } else {
                return (a, MlpCache { activations });
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dinput`.
    pub fn backward(&self, cache: &MlpCache, grad_out: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut g = grad_out;
        for l in (0..self.weights.len()).rev() {
            let h = &cache.activations[l];
            grads.weights[l] += &h.t().dot(&g);
            grads.biases[l] += &g.sum_axis(Axis(0));
            let mut gh = g.dot(&self.weights[l].t());
            if l > 0 {
                // h = tanh(a): dh/da = 1 - h^2
                ndarray::Zip::from(&mut gh)
                    .and(h)
                    .for_each(|gv, &hv| *gv *= 1.0 - hv * hv);
            }
            g = gh;
        }
        g
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 4, 2], 0.5, &mut rng);
        let x = Array2::from_shape_fn((7, 3), |_| rng.random::<f64>() - 0.5);
        let c = Array2::from_shape_fn((7, 2), |_| rng.random::<f64>() - 0.5);
        let loss = |n: &Mlp, x: &Array2<f64>| (n.forward(x.view()) * &c).sum();
        let (out, cache) = net.forward_cached(x.view());
        assert_eq!(out, net.forward(x.view()));
        let mut grads = net.zeros_like();
        let gx = net.backward(&cache, c.clone(), &mut grads);
        let h = 1e-6;
        let mut probe = net.clone();
        let analytic: Vec<f64> = grads.tensors().concat();
        let mut k = 0;
        for t in 0..probe.tensors().len() {
            for i in 0..probe.tensors()[t].len() {
                let orig = probe.tensors()[t][i];
                probe.tensors_mut()[t][i] = orig + h;
                let up = loss(&probe, &x);
                probe.tensors_mut()[t][i] = orig - h;
                let dn = loss(&probe, &x);
                probe.tensors_mut()[t][i] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((analytic[k] - fd).abs() < 1e-7 * fd.abs().max(1.0));
                k += 1;
            }
        }
        for i in 0..7 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert!((gx[[i, j]] - fd).abs() < 1e-7 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_output_scale_gives_zero_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 8, 8, 3], 0.0, &mut rng);
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64);
        assert!(net.forward(x.view()).iter().all(|&v| v == 0.0));
    }
}
