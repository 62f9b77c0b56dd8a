//! Deterministic data-parallel execution.
//!
//! Work is split into fixed-size row partitions whose boundaries depend only
//! on the row count, never on the number of workers. Results are gathered
//! and reduced in partition order, so any worker count gives bit-identical
//! output.

use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::density::DensityModel;
use crate::error::{Error, Result};

/// Rows per partition.
pub const PARTITION_ROWS: usize = 65_536;

/// Environment variable read by the CLI for the default worker count.
pub const WORKERS_ENV: &str = "PHASEFOLD_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    rows: usize,
    chunk: usize,
}

impl PartitionPlan {
    pub fn new(rows: usize) -> Self {
        Self::with_chunk(rows, PARTITION_ROWS)
    }

    pub fn with_chunk(rows: usize, chunk: usize) -> Self {
        Self {
            rows,
            chunk: chunk.max(1),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.div_ceil(self.chunk)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn range(&self, partition: usize) -> Range<usize> {
        let start = partition * self.chunk;
        start..(start + self.chunk).min(self.rows)
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.len()).map(|p| self.range(p))
    }
}

/// Worker pool of a fixed size.
#[derive(Clone)]
pub struct Executor {
    pool: Arc<rayon::ThreadPool>,
    workers: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Number of hardware threads, at least 1.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("phasefold-{i}"))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            pool: Arc::new(pool),
            workers,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f` inside this pool (nested rayon calls use its workers).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Applies `f` to every partition and returns the results in partition
    /// order. A panic inside `f` becomes [`Error::WorkerPanic`] for the
    /// lowest failing partition.
    pub fn map_partitions<T, F>(&self, plan: &PartitionPlan, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, Range<usize>) -> T + Sync,
    {
        let results: Vec<std::result::Result<T, String>> = self.pool.install(|| {
            (0..plan.len())
                .into_par_iter()
                .map(|p| catch_unwind(AssertUnwindSafe(|| f(p, plan.range(p)))).map_err(panic_message))
                .collect()
        });
        results
            .into_iter()
            .enumerate()
            .map(|(partition, r)| r.map_err(|message| Error::WorkerPanic { partition, message }))
            .collect()
    }

    /// Log-density of every row, evaluated partition by partition.
    pub fn log_densities<M: DensityModel + ?Sized>(&self, model: &M, data: &Dataset) -> Result<Vec<f64>> {
        let dims = data.dims();
        let plan = PartitionPlan::new(data.rows());
        let parts = self.map_partitions(&plan, |_, range| {
            let mut out = vec![0.0; range.len()];
            model.log_density_batch(&data.values()[range.start * dims..range.end * dims], &mut out);
            out
        })?;
        Ok(parts.concat())
    }

    /// Sum of `f` over rows, reduced in fixed partition order.
    pub fn sum_rows<F>(&self, rows: usize, f: F) -> Result<f64>
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let plan = PartitionPlan::new(rows);
        let parts = self.map_partitions(&plan, |_, range| range.map(&f).sum::<f64>())?;
        Ok(parts.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::AnalyticDensity;
    use proptest::prelude::*;

    #[test]
    fn plan_does_not_depend_on_workers() {
        let p = PartitionPlan::new(200_000);
        assert_eq!(p.len(), 4);
        assert_eq!(p.range(3), 196_608..200_000);
        assert!(PartitionPlan::new(0).is_empty());
    }

    #[test]
    fn worker_counts_agree_bitwise() {
        let n = 150_000;
        let values: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let data = Dataset::from_values(values, 1).unwrap();
        let g = AnalyticDensity::gaussian(vec![0.0], vec![2.0]);
        let base = Executor::new(1).unwrap().log_densities(&g, &data).unwrap();
        let base_sum = Executor::new(1).unwrap().sum_rows(n, |i| base[i]).unwrap();
        for w in [2, 3, 4] {
            let ex = Executor::new(w).unwrap();
            let got = ex.log_densities(&g, &data).unwrap();
            assert!(got.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(ex.sum_rows(n, |i| got[i]).unwrap().to_bits(), base_sum.to_bits());
        }
    }

    #[test]
    fn panics_become_errors() {
        let ex = Executor::new(2).unwrap();
        let plan = PartitionPlan::with_chunk(10, 3);
        let err = ex
            .map_partitions(&plan, |p, _| {
                if p == 2 {
                    panic!("boom");
                }
                p
            })
            .unwrap_err();
        match err {
            Error::WorkerPanic { partition, message } => {
                assert_eq!(partition, 2);
                assert!(message.contains("boom"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Executor::new(0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_tile_the_rows(rows in 0usize..10_000, chunk in 1usize..700) {
            let p = PartitionPlan::with_chunk(rows, chunk);
            let mut next = 0;
            for r in p.ranges() {
                prop_assert_eq!(r.start, next);
                prop_assert!(!r.is_empty() && r.len() <= chunk);
                next = r.end;
            }
            prop_assert_eq!(next, rows);
        }
    }
}
