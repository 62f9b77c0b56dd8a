use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-dimension min-max map onto `[lo, hi]`.
///
/// Dimensions with zero extent on the fitting data are degenerate and map to
/// the range midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub target_lo: f64,
    pub target_hi: f64,
    min: Vec<f64>,
    extent: Vec<f64>,
}

pub fn fit_rescaler(dataset: &Dataset, lo: f64, hi: f64) -> Result<ScalingTransform> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("rescale range [{lo}, {hi}] is empty")));
    }
    let (min, max) = dataset.bounds();
    let extent = min.iter().zip(&max).map(|(a, b)| b - a).collect();
    Ok(ScalingTransform {
        target_lo: lo,
        target_hi: hi,
        min,
        extent,
    })
}

impl ScalingTransform {
    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, dim: usize) -> bool {
        self.extent[dim] == 0.0
    }

    pub fn degenerate_dims(&self) -> Vec<usize> {
        (0..self.dims()).filter(|&d| self.is_degenerate(d)).collect()
    }

    /// Multiplicative factor applied to dimension `dim` (0 when degenerate).
    pub fn scale(&self, dim: usize) -> f64 {
        if self.is_degenerate(dim) {
            0.0
        } else {
            (self.target_hi - self.target_lo) / self.extent[dim]
        }
    }

    /// Raw value that maps onto `target_lo`.
    pub fn offset(&self, dim: usize) -> f64 {
        self.min[dim]
    }

    #[inline]
    pub fn forward_value(&self, dim: usize, x: f64) -> f64 {
        if self.is_degenerate(dim) {
            return 0.5 * (self.target_lo + self.target_hi);
        }
        let t = (x - self.min[dim]) / self.extent[dim];
        if t == 1.0 {
            // keep max -> hi exact
            return self.target_hi;
        }
        self.target_lo + t * (self.target_hi - self.target_lo)
    }

    #[inline]
    pub fn inverse_value(&self, dim: usize, y: f64) -> f64 {
        if self.is_degenerate(dim) {
            return self.min[dim];
        }
        let t = (y - self.target_lo) / (self.target_hi - self.target_lo);
        self.min[dim] + t * self.extent[dim]
    }

    pub fn forward_row(&self, row: &[f64], out: &mut [f64]) {
        for (d, (o, &x)) in out.iter_mut().zip(row).enumerate() {
            *o = self.forward_value(d, x);
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check_dims(dataset)?;
        let dims = dataset.dims();
        let values = dataset
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| self.forward_value(i % dims, x))
            .collect();
        Ok(Dataset::new(values, dims, dataset.column_names().to_vec())?
            .with_source(dataset.source().to_string()))
    }

    pub fn invert(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check_dims(dataset)?;
        let dims = dataset.dims();
        let values = dataset
            .values()
            .iter()
            .enumerate()
            .map(|(i, &y)| self.inverse_value(i % dims, y))
            .collect();
        Ok(Dataset::new(values, dims, dataset.column_names().to_vec())?
            .with_source(dataset.source().to_string()))
    }

    fn check_dims(&self, dataset: &Dataset) -> Result<()> {
        if dataset.dims() != self.dims() {
            return Err(Error::invalid(format!(
                "rescaler fitted on {} dims applied to {}",
                self.dims(),
                dataset.dims()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_map() {
        let d = Dataset::from_values(vec![0.0, 1.0, 3.0], 1).unwrap();
        let t = fit_rescaler(&d, -4.0, 4.0).unwrap();
        let out = t.apply(&d).unwrap();
        assert_eq!(out.values()[0], -4.0);
        assert!((out.values()[1] - (-4.0 + 8.0 / 3.0)).abs() < 1e-15);
        assert_eq!(out.values()[2], 4.0);
    }

    #[test]
    fn constant_column_maps_to_midpoint() {
        let d = Dataset::from_values(vec![2.0, 1.0, 2.0, 5.0], 2).unwrap();
        let t = fit_rescaler(&d, -4.0, 4.0).unwrap();
        assert_eq!(t.degenerate_dims(), vec![0]);
        let out = t.apply(&d).unwrap();
        assert_eq!(out.row(0)[0], 0.0);
        assert_eq!(out.row(1)[0], 0.0);
        assert_eq!(out.row(0)[1], -4.0);
        assert_eq!(out.row(1)[1], 4.0);
    }

    #[test]
    fn identity_on_target_range() {
        let d = Dataset::from_values(vec![-4.0, 0.3, 1.7, 4.0, -2.2], 1).unwrap();
        let t = fit_rescaler(&d, -4.0, 4.0).unwrap();
        let out = t.apply(&d).unwrap();
        for (a, b) in d.values().iter().zip(out.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_empty_range() {
        let d = Dataset::from_values(vec![1.0], 1).unwrap();
        assert!(fit_rescaler(&d, 1.0, 1.0).is_err());
        assert!(fit_rescaler(&d, 2.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn inverse_after_forward_is_identity(
            vals in proptest::collection::vec(-1e6f64..1e6, 4..200),
            lo in -10.0f64..0.0,
            width in 0.1f64..20.0,
        ) {
            let d = Dataset::from_values(vals, 2).unwrap_or_else(|_| Dataset::from_values(vec![0.0, 1.0], 2).unwrap());
            let t = fit_rescaler(&d, lo, lo + width).unwrap();
            let scaled = t.apply(&d).unwrap();
            let (smin, smax) = scaled.bounds();
            for dim in 0..2 {
                if !t.is_degenerate(dim) {
                    prop_assert_eq!(smin[dim], lo);
                    prop_assert_eq!(smax[dim], lo + width);
                }
            }
            let back = t.invert(&scaled).unwrap();
            for (i, (a, b)) in d.values().iter().zip(back.values()).enumerate() {
                if !t.is_degenerate(i % 2) {
                    let ext = t.extent[i % 2];
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(ext));
                }
            }
        }
    }
}
