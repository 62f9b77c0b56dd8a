//! Comparison samplers.

mod kmeans;

pub use kmeans::{kmeans, KMeansModel};

use rand::seq::index;

use crate::data::{Dataset, ScalingTransform};
use crate::density::{EstimatorConfig, DEFAULT_MEMORY_CAP};
use crate::error::{Error, Result};
use crate::metrics::{distance_criterion, distance_criterion_with};
use crate::parallel::Executor;
use crate::rng::{self, Stream};
use crate::selection::{predictor_select, SelectionConfig, SelectionResult};

fn check_n(n: usize, rows: usize) -> Result<()> {
    if n > rows {
        return Err(Error::AllPointsSelected {
            target: n as f64,
            available: rows,
        });
    }
    Ok(())
}

/// `n` distinct rows drawn uniformly at random.
pub fn random_sample(rows: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    check_n(n, rows)?;
    let mut rng = rng::stream(seed, Stream::Baseline, &[rows as u64, n as u64]);
    Ok(index::sample(&mut rng, rows, n).into_vec())
}

/// Per-cluster quotas: `n / k` each, the remainder to the largest clusters,
/// then any shortfall from small clusters handed out one at a time, in
/// cluster order, to clusters with spare members.
pub fn stratified_allocation(sizes: &[usize], n: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    check_n(n, total)?;
    let k = sizes.len();
    let mut quota = vec![n / k; k];
    let mut by_size: Vec<usize> = (0..k).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for &c in by_size.iter().take(n % k) {
        quota[c] += 1;
    }
    let mut deficit = 0;
    for c in 0..k {
        if quota[c] > sizes[c] {
            deficit += quota[c] - sizes[c];
            quota[c] = sizes[c];
        }
    }
    while deficit > 0 {
        for c in 0..k {
            if deficit > 0 && quota[c] < sizes[c] {
                quota[c] += 1;
                deficit -= 1;
            }
        }
    }
    Ok(quota)
}

/// Stratified sampling with one stratum per k-means cluster.
pub fn stratified_sample(data: &Dataset, model: &KMeansModel, n: usize, seed: u64) -> Result<Vec<usize>> {
    if model.assignments.len() != data.rows() {
        return Err(Error::invalid("clustering does not match the dataset"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k];
    for (i, &c) in model.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quota = stratified_allocation(&sizes, n)?;
    let mut out = Vec::with_capacity(n);
    for (c, m) in members.iter().enumerate() {
        if quota[c] == 0 {
            continue;
        }
        let mut rng = rng::stream(seed, Stream::Stratified, &[c as u64]);
        out.extend(index::sample(&mut rng, m.len(), quota[c]).into_iter().map(|j| m[j]));
    }
    Ok(out)
}

/// Best criterion among `iterations` random subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub indices: Vec<usize>,
    pub criterion: f64,
    /// Best criterion after each iteration.
    pub trace: Vec<f64>,
}

/// Keeps the random subset with the largest distance criterion. Iteration
/// `i` uses a seed derived from `(seed, i)`, so runs with more iterations
/// extend those with fewer. The criterion is computed after rescaling with
/// `transform` (fit it on the parent dataset for comparability).
pub fn brute_force_max_criterion(
    data: &Dataset,
    n: usize,
    iterations: usize,
    seed: u64,
    transform: Option<&ScalingTransform>,
) -> Result<BruteForceResult> {
    if iterations == 0 {
        return Err(Error::invalid("at least one iteration is required"));
    }
    if n < 2 {
        return Err(Error::invalid("the criterion needs n >= 2"));
    }
    let scaled;
    let source = match transform {
        Some(t) => {
            scaled = t.apply(data)?;
            &scaled
        }
        None => data,
    };
    let mut best = BruteForceResult {
        indices: Vec::new(),
        criterion: f64::NEG_INFINITY,
        trace: Vec::with_capacity(iterations),
    };
    for it in 0..iterations {
        let s = rng::derive(seed, Stream::Baseline, &[it as u64]);
        let idx = random_sample(data.rows(), n, s)?;
        let subset = source.select_rows(&idx)?;
        let c = distance_criterion(&subset, false)?;
        if c > best.criterion {
            best.criterion = c;
            best.indices = idx;
        }
        best.trace.push(best.criterion);
    }
    Ok(best)
}

/// Full-binning selection: a histogram over the full dataset, no working
/// subset and no iteration, then the standard calibration and selection.
pub fn full_binning_select(
    data: &Dataset,
    n: usize,
    bins: usize,
    seed: u64,
    memory_cap: Option<u64>,
    executor: &Executor,
) -> Result<SelectionResult> {
    let rows = data.rows();
    let estimator = EstimatorConfig::Histogram {
        bins,
        memory_cap: memory_cap.unwrap_or(DEFAULT_MEMORY_CAP),
    };
    let mut cfg = SelectionConfig::new(n, rows, estimator).with_seed(seed);
    cfg.n_prime = Some(rows);
    predictor_select(data, &cfg, executor)
}

/// Criterion of `indices` using a rescaler fit on the parent dataset.
pub fn subset_criterion(data: &Dataset, indices: &[usize], parent: &ScalingTransform) -> Result<f64> {
    distance_criterion_with(&data.select_rows(indices)?, parent)
}
