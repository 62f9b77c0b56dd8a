//! Equidistant-bin histogram density over the training bounding box.

use super::DensityModel;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default cap on the dense bin array: 4 GiB.
pub const DEFAULT_MEMORY_CAP: u64 = 4 << 30;

/// Floor mass relative to the largest bin mass.
pub const FLOOR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    bins: usize,
    lower: Vec<f64>,
    width: Vec<f64>,
    masses: Vec<f64>,
    floor_mass: f64,
    log_bin_volume: f64,
    trained_on: usize,
}

/// Bytes needed for `bins^dims` f64 cells, or `None` on overflow.
pub fn dense_bytes(bins: usize, dims: usize) -> Option<u128> {
    (bins as u128)
        .checked_pow(dims as u32)
        .and_then(|c| c.checked_mul(8))
}

pub fn fit_histogram(working: &Dataset, bins: usize, memory_cap: u64) -> Result<HistogramDensity> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin per dimension"));
    }
    let dims = working.dims();
    let required = dense_bytes(bins, dims).unwrap_or(u128::MAX);
    if required > memory_cap as u128 {
        return Err(Error::OutOfMemoryBudget {
            required,
            cap: memory_cap as u128,
        });
    }
    let (min, max) = working.bounds();
    let mut lower = min;
    let mut width = Vec::with_capacity(dims);
    for d in 0..dims {
        let extent = max[d] - lower[d];
        if extent > 0.0 {
            width.push(extent / bins as f64);
        } else {
            // zero extent: a unit-wide box centred on the value
            lower[d] -= 0.5;
            width.push(1.0 / bins as f64);
        }
    }
    let cells = bins.pow(dims as u32);
    let mut model = HistogramDensity {
        bins,
        lower,
        log_bin_volume: width.iter().map(|w| w.ln()).sum(),
        width,
        masses: vec![0.0; cells],
        floor_mass: 0.0,
        trained_on: working.rows(),
    };
    let mut counts = vec![0u64; cells];
    for row in working.iter_rows() {
        let cell = model
            .cell_of(row)
            .expect("training rows lie inside the bounding box");
        counts[cell] += 1;
    }
    let total = working.rows() as f64;
    let mut max_mass: f64 = 0.0;
    for (m, &c) in model.masses.iter_mut().zip(&counts) {
        *m = c as f64 / total;
        max_mass = max_mass.max(*m);
    }
    model.floor_mass = FLOOR_RATIO * max_mass;
    Ok(model)
}

impl HistogramDensity {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn floor_mass(&self) -> f64 {
        self.floor_mass
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn width(&self) -> &[f64] {
        &self.width
    }

    /// The `B + 1` bin edges along `dim`.
    pub fn edges(&self, dim: usize) -> Vec<f64> {
        (0..=self.bins)
            .map(|k| self.lower[dim] + k as f64 * self.width[dim])
            .collect()
    }

    /// Flat index of the bin containing `x`; `None` outside the bounding box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut cell = 0usize;
        for d in 0..x.len() {
            let t = (x[d] - self.lower[d]) / self.width[d];
            if !(t >= 0.0) {
                return None;
            }
            let mut k = t.floor() as usize;
            if k >= self.bins {
                // the upper box face belongs to the last bin
                if t <= self.bins as f64 + 1e-9 {
                    k = self.bins - 1;
                } else {
                    return None;
                }
            }
            cell = cell * self.bins + k;
        }
        Some(cell)
    }

    pub(crate) fn from_parts(
        bins: usize,
        lower: Vec<f64>,
        width: Vec<f64>,
        masses: Vec<f64>,
        floor_mass: f64,
        trained_on: usize,
    ) -> Self {
        Self {
            bins,
            log_bin_volume: width.iter().map(|w| w.ln()).sum(),
            lower,
            width,
            masses,
            floor_mass,
            trained_on,
        }
    }
}

impl DensityModel for HistogramDensity {
    fn dims(&self) -> usize {
        self.lower.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mass = match self.cell_of(x) {
            Some(c) => self.masses[c].max(self.floor_mass),
            None => self.floor_mass,
        };
        mass.ln() - self.log_bin_volume
    }

    fn log_floor(&self) -> f64 {
        self.floor_mass.ln() - self.log_bin_volume
    }
}
