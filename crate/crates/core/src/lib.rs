//! Uniform-in-phase-space instance selection.
//!
//! A density estimate of the data drives a rejection sampler whose
//! acceptance probability is inversely proportional to the density, so the
//! selected subset covers the support of the data more evenly than random
//! sampling does.

pub mod baselines;
pub mod data;
pub mod density;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod selection;

pub use error::{Error, ErrorClass, Result};
pub use data::Dataset;
pub use density::{DensityModel, EstimatorConfig, FittedModel, TrainConfig};
pub use parallel::Executor;
pub use report::RunReport;
pub use selection::{predictor_corrector_select, predictor_select, SelectionConfig, SelectionResult};
