//! Scalar monotone transforms used inside coupling layers.
//!
//! Each transform maps one coordinate given a slice of unconstrained
//! parameters (produced by a conditioner network or learned directly). The
//! "forward" direction here is data -> latent; `inverse` goes back.

use serde::{Deserialize, Serialize};

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Bound on the affine log-scale, applied as `S * tanh(raw / S)`.
const AFFINE_LOG_SCALE_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransformKind {
    Affine,
    /// Monotone rational-quadratic spline on `[-tail_bound, tail_bound]`,
    /// identity outside.
    Spline { knots: usize, tail_bound: f64 },
}

impl TransformKind {
    pub fn param_count(&self) -> usize {
        match self {
            TransformKind::Affine => 2,
            TransformKind::Spline { knots, .. } => 3 * knots - 1,
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Offset making the interior derivative exactly 1 at zero raw input.
fn derivative_offset() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

/// Reusable knot buffers for one spline evaluation.
#[derive(Debug, Clone, Default)]
pub struct Knots {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
    pw: Vec<f64>,
    ph: Vec<f64>,
    bound: f64,
    offset: f64,
}

impl Knots {
    pub fn new() -> Self {
        Self {
            offset: derivative_offset(),
            ..Default::default()
        }
    }

    /// Knot positions, heights and derivatives from raw parameters laid out as
    /// `[widths; K][heights; K][interior derivatives; K-1]`.
    pub fn compute(&mut self, raw: &[f64], knots: usize, bound: f64) {
        debug_assert_eq!(raw.len(), 3 * knots - 1);
        self.bound = bound;
        softmax_into(&raw[..knots], &mut self.pw);
        softmax_into(&raw[knots..2 * knots], &mut self.ph);
        cumulative_knots(&self.pw, MIN_BIN_WIDTH, bound, &mut self.xs);
        cumulative_knots(&self.ph, MIN_BIN_HEIGHT, bound, &mut self.ys);
        self.ds.clear();
        self.ds.push(1.0);
        for &u in &raw[2 * knots..] {
            self.ds.push(MIN_DERIVATIVE + softplus(u + self.offset));
        }
        self.ds.push(1.0);
    }

    fn bins(&self) -> usize {
        self.xs.len() - 1
    }

    #[inline]
    fn bin_of(edges: &[f64], v: f64) -> usize {
        let k = edges.len() - 1;
        edges[1..k].partition_point(|&e| e <= v)
    }

    #[inline]
    fn inside(&self, v: f64) -> bool {
        v >= -self.bound && v <= self.bound
    }

    /// Data -> latent: returns `(y, log dy/dx)`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        if !self.inside(x) {
            return (x, 0.0);
        }
        let k = Self::bin_of(&self.xs, x);
        let (xk, xk1) = (self.xs[k], self.xs[k + 1]);
        let (yk, yk1) = (self.ys[k], self.ys[k + 1]);
        let (dk, dk1) = (self.ds[k], self.ds[k + 1]);
        let w = xk1 - xk;
        let h = yk1 - yk;
        let s = h / w;
        let xi = ((x - xk) / w).clamp(0.0, 1.0);
        let t = xi * (1.0 - xi);
        let num = h * (s * xi * xi + dk * t);
        let den = s + (dk1 + dk - 2.0 * s) * t;
        let y = yk + num / den;
        let dnum = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);
        let ldj = 2.0 * s.ln() + dnum.ln() - 2.0 * den.ln();
        (y, ldj)
    }

    /// Latent -> data: returns `(x, log dy/dx at x)`.
    pub fn inverse(&self, y: f64) -> (f64, f64) {
        if !self.inside(y) {
            return (y, 0.0);
        }
        let k = Self::bin_of(&self.ys, y);
        let (xk, xk1) = (self.xs[k], self.xs[k + 1]);
        let (yk, yk1) = (self.ys[k], self.ys[k + 1]);
        let (dk, dk1) = (self.ds[k], self.ds[k + 1]);
        let w = xk1 - xk;
        let h = yk1 - yk;
        let s = h / w;
        let dy = y - yk;
        let sum = dk1 + dk - 2.0 * s;
        let a = h * (s - dk) + dy * sum;
        let b = h * dk - dy * sum;
        let c = -s * dy;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let xi = if dy == 0.0 {
            0.0
        } else {
            (2.0 * c / (-b - disc.sqrt())).clamp(0.0, 1.0)
        };
        let x = xk + xi * w;
        let t = xi * (1.0 - xi);
        let den = s + sum * t;
        let dnum = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);
        (x, 2.0 * s.ln() + dnum.ln() - 2.0 * den.ln())
    }

    /// Backpropagates `gy = dL/dy` and `gl = dL/d(ldj)` through `forward(x)`.
    /// Accumulates parameter gradients into `graw` and returns `dL/dx`.
    pub fn backward(&self, raw: &[f64], x: f64, gy: f64, gl: f64, graw: &mut [f64]) -> f64 {
        if !self.inside(x) {
            return gy;
        }
        let kb = self.bins();
        let k = Self::bin_of(&self.xs, x);
        let (xk, xk1) = (self.xs[k], self.xs[k + 1]);
        let (yk, yk1) = (self.ys[k], self.ys[k + 1]);
        let (dk, dk1) = (self.ds[k], self.ds[k + 1]);
        let w = xk1 - xk;
        let h = yk1 - yk;
        let s = h / w;
        let xi = (x - xk) / w;
        let t = xi * (1.0 - xi);
        let one_m = 1.0 - xi;
        let num = h * (s * xi * xi + dk * t);
        let den = s + (dk1 + dk - 2.0 * s) * t;
        let dnum = dk1 * xi * xi + 2.0 * s * t + dk * one_m * one_m;

        // y = yk + num / den
        let mut g_yk = gy;
        let g_num = gy / den;
        let mut g_den = -gy * num / (den * den);
        // ldj = 2 ln s + ln dnum - 2 ln den
        let mut g_s = 2.0 * gl / s;
        let g_dnum = gl / dnum;
        g_den += -2.0 * gl / den;
        // dnum
        let mut g_dk1 = g_dnum * xi * xi;
        let mut g_dk = g_dnum * one_m * one_m;
        g_s += g_dnum * 2.0 * t;
        let mut g_t = g_dnum * 2.0 * s;
        let mut g_xi = g_dnum * (2.0 * dk1 * xi - 2.0 * dk * one_m);
        // den = s + (dk1 + dk - 2 s) t
        g_s += g_den * (1.0 - 2.0 * t);
        g_dk1 += g_den * t;
        g_dk += g_den * t;
        g_t += g_den * (dk1 + dk - 2.0 * s);
        // num = h (s xi^2 + dk t)
        let mut g_h = g_num * (s * xi * xi + dk * t);
        g_s += g_num * h * xi * xi;
        g_xi += g_num * h * 2.0 * s * xi;
        g_dk += g_num * h * t;
        g_t += g_num * h * dk;
        // t = xi - xi^2
        g_xi += g_t * (1.0 - 2.0 * xi);
        // s = h / w
        g_h += g_s / w;
        let mut g_w = -g_s * h / (w * w);
        // xi = (x - xk) / w
        let g_x = g_xi / w;
        let mut g_xk = -g_xi / w;
        g_w += -g_xi * xi / w;
        // h = yk1 - yk, w = xk1 - xk
        let g_yk1 = g_h;
        g_yk -= g_h;
        let g_xk1 = g_w;
        g_xk -= g_w;

        let (gw, rest) = graw.split_at_mut(kb);
        let (gh, gd) = rest.split_at_mut(kb);
        knot_grad_to_raw(&self.pw, MIN_BIN_WIDTH, self.bound, k, g_xk, g_xk1, gw);
        knot_grad_to_raw(&self.ph, MIN_BIN_HEIGHT, self.bound, k, g_yk, g_yk1, gh);
        // interior derivatives: ds[i] for i in 1..K uses raw index 2K + i - 1
        for (i, g) in [(k, g_dk), (k + 1, g_dk1)] {
            if i >= 1 && i < kb {
                let u = raw[2 * kb + i - 1];
                gd[i - 1] += g * sigmoid(u + self.offset);
            }
        }
        g_x
    }
}

fn softmax_into(raw: &[f64], out: &mut Vec<f64>) {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(raw.iter().map(|&r| (r - max).exp()));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
}

fn cumulative_knots(p: &[f64], min: f64, bound: f64, out: &mut Vec<f64>) {
    let k = p.len();
    let scale = 1.0 - k as f64 * min;
    out.clear();
    out.push(-bound);
    let mut acc = 0.0;
    for &pi in &p[..k - 1] {
        acc += min + scale * pi;
        out.push(-bound + 2.0 * bound * acc);
    }
    out.push(bound);
}

/// Chains gradients on knots `k` and `k + 1` back to the softmax logits.
fn knot_grad_to_raw(
    p: &[f64],
    min: f64,
    bound: f64,
    k: usize,
    g_lo: f64,
    g_hi: f64,
    graw: &mut [f64],
) {
    let kb = p.len();
    // knot i (0 < i < K) = -B + 2B * sum_{j<i} w_j; the end knots are fixed
    let g_knot = |i: usize| if i >= 1 && i < kb { 1.0 } else { 0.0 };
    let lo = g_knot(k) * g_lo;
    let hi = g_knot(k + 1) * g_hi;
    if lo == 0.0 && hi == 0.0 {
        return;
    }
    // dL/dw_j = 2B (lo [j < k] + hi [j < k+1])
    let scale = 1.0 - kb as f64 * min;
    let gw = |j: usize| {
        let mut g = 0.0;
        if j < k {
            g += lo;
        }
        if j < k + 1 {
            g += hi;
        }
        2.0 * bound * g
    };
    let dot: f64 = (0..kb).map(|j| p[j] * gw(j)).sum();
    for j in 0..kb {
        graw[j] += scale * p[j] * (gw(j) - dot);
    }
}

/// Affine element `y = x exp(s) + t` with a bounded log-scale.
#[inline]
pub fn affine_forward(raw: &[f64], x: f64) -> (f64, f64) {
    let s = AFFINE_LOG_SCALE_BOUND * (raw[1] / AFFINE_LOG_SCALE_BOUND).tanh();
    (x * s.exp() + raw[0], s)
}

#[inline]
pub fn affine_inverse(raw: &[f64], y: f64) -> (f64, f64) {
    let s = AFFINE_LOG_SCALE_BOUND * (raw[1] / AFFINE_LOG_SCALE_BOUND).tanh();
    ((y - raw[0]) * (-s).exp(), s)
}

#[inline]
pub fn affine_backward(raw: &[f64], x: f64, gy: f64, gl: f64, graw: &mut [f64]) -> f64 {
    let th = (raw[1] / AFFINE_LOG_SCALE_BOUND).tanh();
    let s = AFFINE_LOG_SCALE_BOUND * th;
    let es = s.exp();
    graw[0] += gy;
    graw[1] += (gy * x * es + gl) * (1.0 - th * th);
    gy * es
}

/// Dispatches a transform kind over reusable knot buffers.
#[derive(Debug, Clone)]
pub struct Element {
    kind: TransformKind,
    knots: Knots,
}

impl Element {
    pub fn new(kind: TransformKind) -> Self {
        Self {
            kind,
            knots: Knots::new(),
        }
    }

    #[inline]
    pub fn forward(&mut self, raw: &[f64], x: f64) -> (f64, f64) {
        match self.kind {
            TransformKind::Affine => affine_forward(raw, x),
            TransformKind::Spline { knots, tail_bound } => {
                self.knots.compute(raw, knots, tail_bound);
                self.knots.forward(x)
            }
        }
    }

    #[inline]
    pub fn inverse(&mut self, raw: &[f64], y: f64) -> (f64, f64) {
        match self.kind {
            TransformKind::Affine => affine_inverse(raw, y),
            TransformKind::Spline { knots, tail_bound } => {
                self.knots.compute(raw, knots, tail_bound);
                self.knots.inverse(y)
            }
        }
    }

    #[inline]
    pub fn backward(&mut self, raw: &[f64], x: f64, gy: f64, gl: f64, graw: &mut [f64]) -> f64 {
        match self.kind {
            TransformKind::Affine => affine_backward(raw, x, gy, gl, graw),
            TransformKind::Spline { knots, tail_bound } => {
                self.knots.compute(raw, knots, tail_bound);
                self.knots.backward(raw, x, gy, gl, graw)
            }
        }
    }
}
