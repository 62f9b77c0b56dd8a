//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub dims: usize,
    /// Row-major `k x dims`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dims..(c + 1) * self.dims]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dims: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(dims).enumerate() {
        let d = sq_dist(x, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(data: &Dataset, k: usize, seed: u64) -> Vec<f64> {
    let n = data.rows();
    let dims = data.dims();
    let mut rng = rng::stream(seed, Stream::KMeans, &[n as u64, k as u64]);
    let mut centroids = Vec::with_capacity(k * dims);
    centroids.extend_from_slice(data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, &centroids[..dims])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let row = data.row(pick).to_vec();
        for (i, r) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &row));
        }
        centroids.extend_from_slice(&row);
    }
    centroids
}

/// Runs Lloyd iterations until the assignment stops changing or
/// `max_iters` is reached. Empty clusters are reseeded at the point farthest
/// from its current centroid.
pub fn kmeans(data: &Dataset, k: usize, seed: u64, max_iters: usize) -> Result<KMeansModel> {
    let n = data.rows();
    let dims = data.dims();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k={k} must lie in 1..={n}")));
    }
    let mut centroids = plus_plus(data, k, seed);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, dims, data.row(i)))
            .collect();
        let inertia: f64 = assigned.iter().map(|a| a.1).sum();
        history.push(inertia);
        let changed = assigned
            .iter()
            .zip(&assignments)
            .any(|(a, &old)| a.0 != old);
        for (slot, a) in assignments.iter_mut().zip(&assigned) {
            *slot = a.0;
        }
        if !changed {
            converged = true;
            break;
        }
        if iterations == max_iters {
            break;
        }
        iterations += 1;
        // update step, accumulated in row order
        let mut sums = vec![0.0; k * dims];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dims..(c + 1) * dims].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dims {
                    centroids[c * dims + d] = sums[c * dims + d] / counts[c] as f64;
                }
            } else {
                // farthest point, lowest index on ties
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b });
                centroids[c * dims..(c + 1) * dims].copy_from_slice(data.row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansModel {
        k,
        dims,
        centroids,
        assignments,
        inertia: *history.last().expect("at least one assignment"),
        inertia_history: history,
        iterations,
        converged,
    })
}
