//! Serializable run records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::histogram::FLOOR_RATIO;
use crate::error::{Error, Result};
use crate::selection::{SelectionResult, StepTimings, LOG_DENSITY_EPS};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub alpha: f64,
    pub log_alpha: f64,
    pub target: f64,
    pub clipped_fraction: f64,
    pub final_nll: f64,
    pub passes: usize,
    pub topped_up: usize,
    pub timings: StepTimings,
}

/// Everything needed to audit one run. Timings aside, a report is a pure
/// function of the inputs, the configuration and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub version: String,
    /// Echo of the configuration that produced the run.
    pub config: serde_json::Value,
    pub seed: u64,
    pub workers: usize,
    pub rows: usize,
    pub dims: usize,
    pub realized_count: usize,
    /// One value per iteration.
    pub alpha: Vec<f64>,
    pub nll_history: Vec<Vec<f64>>,
    pub iterations: Vec<IterationSummary>,
    /// Summed over iterations.
    pub timings: StepTimings,
    /// Share of calibration points with saturated acceptance in the final iteration.
    pub clipped_fraction: f64,
    /// Histogram floor as a fraction of the largest bin mass.
    pub histogram_floor_ratio: f64,
    /// Lower bound applied to every log-density before scoring.
    pub log_density_eps: f64,
    /// Constant input columns (mapped to the range midpoint when rescaling).
    pub degenerate_dims: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
    /// Population the criterion rescaler was fit on (`parent` or `subset`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion_rescale: Option<String>,
}

impl RunReport {
    pub fn new(method: &str, config: serde_json::Value, seed: u64, workers: usize, rows: usize, dims: usize) -> Self {
        Self {
            method: method.to_string(),
            version: VERSION.to_string(),
            config,
            seed,
            workers,
            rows,
            dims,
            realized_count: 0,
            alpha: Vec::new(),
            nll_history: Vec::new(),
            iterations: Vec::new(),
            timings: StepTimings::default(),
            clipped_fraction: 0.0,
            histogram_floor_ratio: FLOOR_RATIO,
            log_density_eps: LOG_DENSITY_EPS,
            degenerate_dims: Vec::new(),
            metrics: BTreeMap::new(),
            criterion_rescale: None,
        }
    }

    /// Fills the selection fields from a pipeline result.
    pub fn with_selection(mut self, result: &SelectionResult) -> Self {
        self.realized_count = result.realized_count;
        self.alpha = result.iterations.iter().map(|i| i.alpha).collect();
        self.nll_history = result.iterations.iter().map(|i| i.nll_history.clone()).collect();
        self.iterations = result
            .iterations
            .iter()
            .map(|i| IterationSummary {
                alpha: i.alpha,
                log_alpha: i.log_alpha,
                target: i.target,
                clipped_fraction: i.clipped_fraction,
                final_nll: i.final_nll,
                passes: i.passes,
                topped_up: i.topped_up,
                timings: i.timings,
            })
            .collect();
        self.timings = result.timings();
        self.clipped_fraction = result.iterations.last().map_or(0.0, |i| i.clipped_fraction);
        self
    }

    /// Checks that every numeric field is finite.
    pub fn validate(&self) -> Result<()> {
        let mut values: Vec<f64> = vec![
            self.clipped_fraction,
            self.histogram_floor_ratio,
            self.log_density_eps,
            self.timings.step1_s,
            self.timings.step2a_s,
            self.timings.step2b_s,
        ];
        values.extend(&self.alpha);
        values.extend(self.nll_history.iter().flatten());
        values.extend(self.metrics.values());
        for it in &self.iterations {
            values.extend([it.alpha, it.log_alpha, it.target, it.clipped_fraction, it.final_nll]);
        }
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("report contains a non-finite value"))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedHeader(format!("report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorSpec};
    use crate::density::EstimatorConfig;
    use crate::parallel::Executor;
    use crate::selection::{predictor_corrector_select, SelectionConfig};

    #[test]
    fn json_round_trip_is_lossless() {
        let data = generate(&GeneratorSpec::surrogate(2, 2000), 1).unwrap();
        let cfg = SelectionConfig::new(50, 500, EstimatorConfig::histogram(12)).with_iterations(2);
        let r = predictor_corrector_select(&data, &cfg, &Executor::new(1).unwrap()).unwrap();
        let mut rep = RunReport::new("algo2", serde_json::to_value(&cfg).unwrap(), 0, 1, 2000, 2).with_selection(&r);
        rep.metrics.insert("distance_criterion".into(), 0.1 + 0.2);
        rep.alpha.push(1.0 / 3.0);
        let text = rep.to_json().unwrap();
        let back = RunReport::from_json(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.realized_count, 50);
        assert_eq!(back.iterations.len(), 2);
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut rep = RunReport::new("x", serde_json::Value::Null, 0, 1, 1, 1);
        rep.metrics.insert("bad".into(), f64::NAN);
        assert!(rep.to_json().is_err());
    }
}
