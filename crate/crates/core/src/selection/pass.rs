//! The accept/reject scan that turns probabilities into a fixed-size subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{Executor, PartitionPlan};
use crate::rng::{self, Stream};

pub const DEFAULT_MAX_PASSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassOutcome {
    /// Selected row indices in the order they were accepted.
    pub indices: Vec<usize>,
    /// Number of stochastic passes performed.
    pub passes: usize,
    /// Points added by the deterministic top-up.
    pub topped_up: usize,
}

/// Selects exactly `min(n, N)` rows.
///
/// Rows are scanned in index order; row `i` is accepted on pass `k` when
/// `u(seed, k, i) < probs[i]`, and the first `n` acceptances are kept. Later
/// passes revisit only unselected rows. If `max_passes` passes still leave a
/// shortfall, the remaining slots go to the unselected rows with the highest
/// probability (lower index first on ties).
pub fn select_pass(
    probs: &[f64],
    n: usize,
    seed: u64,
    max_passes: usize,
    executor: &Executor,
) -> Result<PassOutcome> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("acceptance probabilities must lie in [0, 1]"));
    }
    let total = probs.len();
    let n = n.min(total);
    let mut selected = vec![false; total];
    let mut indices = Vec::with_capacity(n);
    let plan = PartitionPlan::new(total);
    let mut passes = 0;
    while indices.len() < n && passes < max_passes {
        let pass = passes as u64;
        let taken = &selected;
        let accepted = executor.map_partitions(&plan, |_, range| {
            range
                .filter(|&i| {
                    !taken[i] && rng::uniform(seed, Stream::Select, &[pass, i as u64]) < probs[i]
                })
                .collect::<Vec<usize>>()
        })?;
        passes += 1;
        for i in accepted.into_iter().flatten() {
            if indices.len() == n {
                break;
            }
            selected[i] = true;
            indices.push(i);
        }
    }
    let mut topped_up = 0;
    if indices.len() < n {
        let mut rest: Vec<usize> = (0..total).filter(|&i| !selected[i]).collect();
        rest.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        topped_up = n - indices.len();
        indices.extend_from_slice(&rest[..topped_up]);
    }
    Ok(PassOutcome {
        indices,
        passes,
        topped_up,
    })
}
