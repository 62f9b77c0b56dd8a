//! Shared fixtures for the benchmarks.

use phasefold_core::data::{generate, GeneratorSpec};
use phasefold_core::density::fit_estimator;
use phasefold_core::{Dataset, EstimatorConfig, FittedModel, TrainConfig};

/// Surrogate mixture rows with a fixed seed.
pub fn surrogate(dims: usize, rows: usize) -> Dataset {
    generate(&GeneratorSpec::surrogate(dims, rows), 1).expect("generator")
}

/// Flow config small enough to train inside a benchmark iteration.
pub fn quick_flow(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 256,
        ..TrainConfig::default()
    }
}

/// A briefly trained flow for evaluation benchmarks.
pub fn trained_flow(dims: usize) -> FittedModel {
    let data = surrogate(dims, 5_000);
    fit_estimator(&data, &EstimatorConfig::Flow(quick_flow(200)))
        .expect("flow fit")
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use phasefold_core::DensityModel;

    #[test]
    fn fixtures_build() {
        assert_eq!(surrogate(3, 100).dims(), 3);
        let m = trained_flow(2);
        assert!(m.log_density(&[0.0, 0.0]).is_finite());
    }
}
