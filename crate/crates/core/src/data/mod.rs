//! Dataset representation, file formats, shuffling, rescaling and synthetic generators.

mod generate;
mod io;
mod scale;

pub use generate::{mixture_labels, generate, GaussianComponent, GeneratorSpec, SinusoidField};
pub use io::{load_dataset, save_dataset, Format, BINARY_MAGIC, BINARY_VERSION};
pub use scale::{fit_rescaler, ScalingTransform};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Immutable row-major `N x D` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    rows: usize,
    dims: usize,
    column_names: Vec<String>,
    source: String,
}

impl Dataset {
    /// Builds a dataset, validating shape and finiteness.
    pub fn new(values: Vec<f64>, dims: usize, column_names: Vec<String>) -> Result<Self> {
        if dims == 0 || values.is_empty() || values.len() % dims != 0 {
            return Err(Error::EmptyDataset {
                rows: if dims == 0 { 0 } else { values.len() / dims },
                dims,
            });
        }
        if column_names.len() != dims {
            return Err(Error::MalformedHeader(format!(
                "{} column names for {dims} columns",
                column_names.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dims,
                column: pos % dims,
            });
        }
        Ok(Self {
            rows: values.len() / dims,
            values,
            dims,
            column_names,
            source: String::new(),
        })
    }

    /// Builds a dataset with default column names `x0, x1, ...`.
    pub fn from_values(values: Vec<f64>, dims: usize) -> Result<Self> {
        Self::new(values, dims, default_names(dims))
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dims)
    }

    /// Per-column minimum and maximum.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dims];
        let mut hi = vec![f64::NEG_INFINITY; self.dims];
        for row in self.iter_rows() {
            for d in 0..self.dims {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
        (lo, hi)
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset> {
        let mut values = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i as u64,
                    rows: self.rows,
                });
            }
            values.extend_from_slice(self.row(i));
        }
        let mut out = Dataset::new(values, self.dims, self.column_names.clone())?;
        out.source = self.source.clone();
        Ok(out)
    }

    /// Keeps the first `count` columns.
    pub fn leading_columns(&self, count: usize) -> Result<Dataset> {
        if count == 0 || count > self.dims {
            return Err(Error::invalid(format!(
                "cannot keep {count} of {} columns",
                self.dims
            )));
        }
        let values = self
            .iter_rows()
            .flat_map(|r| r[..count].iter().copied())
            .collect();
        let mut out = Dataset::new(values, count, self.column_names[..count].to_vec())?;
        out.source = self.source.clone();
        Ok(out)
    }
}

pub(crate) fn default_names(dims: usize) -> Vec<String> {
    (0..dims).map(|d| format!("x{d}")).collect()
}

/// A seeded bijection on `0..N`. `order[k]` is the original row placed at position `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub seed: u64,
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng::stream(seed, Stream::Shuffle, &[len as u64]));
        Self { seed, order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Maps positions in the permuted dataset back to original row indices.
    pub fn original(&self, positions: &[usize]) -> Vec<usize> {
        positions.iter().map(|&p| self.order[p]).collect()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &o in &self.order {
            if o >= seen.len() || seen[o] {
                return false;
            }
            seen[o] = true;
        }
        true
    }
}

/// Returns the dataset with rows permuted, and the permutation used.
pub fn shuffle(dataset: &Dataset, seed: u64) -> (Dataset, Permutation) {
    let perm = Permutation::new(dataset.rows(), seed);
    let shuffled = dataset
        .select_rows(&perm.order)
        .expect("permutation indices are in range");
    (shuffled, perm)
}

/// Row indices of a uniform draw of `m` rows without replacement.
pub fn random_subset_indices(rows: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > rows {
        return Err(Error::invalid(format!(
            "subset size {m} must be in 1..={rows}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Subset, &[rows as u64, m as u64]);
    Ok(index::sample(&mut rng, rows, m).into_vec())
}

/// Uniform draw of `m` rows without replacement.
pub fn random_subset(dataset: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    let idx = random_subset_indices(dataset.rows(), m, seed)?;
    dataset.select_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, dims: usize) -> Dataset {
        Dataset::from_values((0..rows * dims).map(|v| v as f64 * 0.5).collect(), dims).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Dataset::from_values(vec![], 2),
            Err(Error::EmptyDataset { .. })
        ));
        assert!(matches!(
            Dataset::from_values(vec![1.0], 0),
            Err(Error::EmptyDataset { .. })
        ));
        assert!(matches!(
            Dataset::from_values(vec![1.0, f64::INFINITY], 1),
            Err(Error::NonFiniteValue { row: 1, column: 0 })
        ));
    }

    #[test]
    fn shuffle_single_row() {
        let d = grid(1, 3);
        let (s, p) = shuffle(&d, 99);
        assert_eq!(s, d);
        assert_eq!(p.order, vec![0]);
    }

    #[test]
    fn shuffle_is_deterministic() {
        let d = grid(50, 2);
        let (a, pa) = shuffle(&d, 42);
        let (b, pb) = shuffle(&d, 42);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (_, pc) = shuffle(&d, 43);
        assert_ne!(pa.order, pc.order);
    }

    #[test]
    fn shuffle_preserves_row_multiset() {
        // sort-and-compare oracle on a random 1000x2 cloud
        let values: Vec<f64> = (0..2000)
            .map(|i| crate::rng::normal(5, Stream::Generate, &[i]))
            .collect();
        let d = Dataset::from_values(values, 2).unwrap();
        let (s, perm) = shuffle(&d, 11);
        assert!(perm.is_bijection());
        let sorted = |ds: &Dataset| {
            let mut rows: Vec<Vec<f64>> = ds.iter_rows().map(|r| r.to_vec()).collect();
            rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
            rows
        };
        assert_eq!(sorted(&d), sorted(&s));
        for (k, &o) in perm.order.iter().enumerate() {
            assert_eq!(s.row(k), d.row(o));
        }
    }

    #[test]
    fn subset_edge_cases() {
        let d = grid(20, 2);
        let full = random_subset(&d, 20, 3).unwrap();
        let mut idx = random_subset_indices(20, 20, 3).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
        assert_eq!(full.rows(), 20);
        let one_a = random_subset(&d, 1, 8).unwrap();
        let one_b = random_subset(&d, 1, 8).unwrap();
        assert_eq!(one_a, one_b);
        assert!(random_subset(&d, 21, 0).is_err());
        assert!(random_subset(&d, 0, 0).is_err());
    }

    #[test]
    fn subset_inclusion_frequency_is_uniform() {
        // Monte Carlo frequency oracle: each row is included with probability 1/2.
        let (n, m, seeds) = (100, 50, 10_000);
        let mut counts = vec![0u32; n];
        for seed in 0..seeds {
            for i in random_subset_indices(n, m, seed).unwrap() {
                counts[i] += 1;
            }
        }
        let p = m as f64 / n as f64;
        let mean = seeds as f64 * p;
        let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
        // 3 sigma per row; allow the handful of excursions expected among 100 rows
        let outliers = counts
            .iter()
            .filter(|&&c| (c as f64 - mean).abs() > 3.0 * sigma)
            .count();
        assert!(outliers <= 2, "{outliers} rows outside 3 sigma");
        assert!(counts
            .iter()
            .all(|&c| (c as f64 - mean).abs() < 4.5 * sigma));
    }

    proptest! {
        #[test]
        fn permutation_is_bijection(len in 1usize..500, seed in any::<u64>()) {
            prop_assert!(Permutation::new(len, seed).is_bijection());
        }
    }
}
