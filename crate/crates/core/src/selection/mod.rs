//! Density-driven rejection sampling: the predictor and predictor-corrector
//! drivers plus their building blocks.

mod calibrate;
mod pass;

pub use calibrate::{
    calibrate_alpha, expected_count, log_scores, Calibration, CalibrationMethod,
    DEFAULT_TOLERANCE, LOG_DENSITY_EPS,
};
pub use pass::{select_pass, PassOutcome, DEFAULT_MAX_PASSES};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{random_subset_indices, shuffle, Dataset, Permutation};
use crate::density::{fit_estimator, mean_nll, DensityModel, EstimatorConfig, FittedModel};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::rng::{self, Stream};

/// Default calibration subsample cap.
pub const DEFAULT_N_PRIME: usize = 100_000;

/// Raw scores and their calibration for one set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceProfile {
    /// `log s_i = -log max(p_i, eps)`.
    pub log_scores: Vec<f64>,
    pub calibration: Calibration,
    pub target: f64,
}

impl AcceptanceProfile {
    /// Calibrates on the first `n_prime` scores, extrapolating to all of them.
    pub fn calibrate(log_scores: Vec<f64>, target: f64, n_prime: usize, method: CalibrationMethod) -> Result<Self> {
        let n_prime = n_prime.clamp(1, log_scores.len().max(1));
        let calibration = calibrate_alpha(&log_scores[..n_prime.min(log_scores.len())], log_scores.len(), target, method)?;
        Ok(Self {
            log_scores,
            calibration,
            target,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.calibration.alpha()
    }

    pub fn raw_scores(&self) -> Vec<f64> {
        self.log_scores.iter().map(|s| s.exp()).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.calibration.probabilities(&self.log_scores)
    }

    pub fn clipped_fraction(&self) -> f64 {
        self.calibration.clipped_fraction
    }
}

/// Raw acceptance scores `1 / max(p, eps)` of every row under `model`.
pub fn raw_acceptance<M: DensityModel + ?Sized>(
    model: &M,
    points: &Dataset,
    executor: &Executor,
) -> Result<Vec<f64>> {
    Ok(raw_log_acceptance(model, points, executor)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Log of [`raw_acceptance`].
pub fn raw_log_acceptance<M: DensityModel + ?Sized>(
    model: &M,
    points: &Dataset,
    executor: &Executor,
) -> Result<Vec<f64>> {
    let log_p = executor.log_densities(model, points)?;
    Ok(log_scores(&log_p, model.log_floor()))
}

/// Calibrated acceptance from a known density (the exact reference path).
pub fn exact_pdf_acceptance<M: DensityModel + ?Sized>(
    pdf: &M,
    points: &Dataset,
    target: f64,
    executor: &Executor,
) -> Result<AcceptanceProfile> {
    let scores = raw_log_acceptance(pdf, points, executor)?;
    let n = scores.len();
    AcceptanceProfile::calibrate(scores, target, n, CalibrationMethod::ClosedForm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Final number of points.
    pub n: usize,
    /// Working-subset size.
    pub m: usize,
    /// Number of predictor-corrector iterations (1 = predictor only).
    pub iterations: usize,
    /// Calibration subsample size; `None` means `min(N, 100_000)`.
    pub n_prime: Option<usize>,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    pub max_passes: usize,
    pub calibration: CalibrationMethod,
    /// Keep the final per-point probabilities and cumulative scores of every iteration.
    pub keep_scores: bool,
    #[serde(default)]
    pub corrector: Corrector,
}

/// What a corrector iteration multiplies its raw scores into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Corrector {
    /// Product of all raw scores so far.
    RawProduct,
    /// The previous iteration's calibrated (clipped) acceptance probability.
    /// The working set was drawn with exactly that probability, so its
    /// density estimate cancels it and the product tracks `1 / p`.
    #[default]
    Acceptance,
}

impl SelectionConfig {
    pub fn new(n: usize, m: usize, estimator: EstimatorConfig) -> Self {
        Self {
            n,
            m,
            iterations: 1,
            n_prime: None,
            estimator,
            seed: 0,
            max_passes: DEFAULT_MAX_PASSES,
            calibration: CalibrationMethod::ClosedForm,
            keep_scores: false,
            corrector: Corrector::default(),
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_n_prime(&self, rows: usize) -> usize {
        self.n_prime.unwrap_or(DEFAULT_N_PRIME).min(rows)
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.n > rows {
            return Err(Error::AllPointsSelected {
                target: self.n as f64,
                available: rows,
            });
        }
        if self.m == 0 || self.m > rows {
            return Err(Error::invalid(format!("working size M={} must lie in 1..={rows}", self.m)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if self.n_prime == Some(0) {
            return Err(Error::invalid("N' must be at least 1"));
        }
        if matches!(self.n_prime, Some(np) if np > rows) {
            return Err(Error::invalid(format!("N' exceeds the dataset size {rows}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    /// Estimator training.
    pub step1_s: f64,
    /// Density evaluation on all rows.
    pub step2a_s: f64,
    /// Calibration and selection.
    pub step2b_s: f64,
}

impl std::ops::AddAssign for StepTimings {
    fn add_assign(&mut self, o: Self) {
        self.step1_s += o.step1_s;
        self.step2a_s += o.step2a_s;
        self.step2b_s += o.step2b_s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub alpha: f64,
    pub log_alpha: f64,
    /// Target count used for this iteration's calibration.
    pub target: f64,
    pub expected: f64,
    pub clipped_fraction: f64,
    /// Per-step training NLL (empty for histograms).
    pub nll_history: Vec<f64>,
    /// Mean NLL of the fitted model over its working set.
    pub final_nll: f64,
    pub passes: usize,
    pub topped_up: usize,
    pub timings: StepTimings,
    /// Cumulative log scores in shuffled order (only with `keep_scores`).
    #[serde(skip)]
    pub cumulative_log_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected positions in the shuffled dataset, in acceptance order.
    pub indices: Vec<usize>,
    pub permutation: Permutation,
    pub realized_count: usize,
    pub iterations: Vec<IterationRecord>,
    /// Final calibrated probabilities in shuffled order (only with `keep_scores`).
    pub probabilities: Option<Vec<f64>>,
    /// Estimator fitted in the last iteration.
    pub model: Option<FittedModel>,
}

impl SelectionResult {
    /// Selected row indices into the original (unshuffled) dataset.
    pub fn original_indices(&self) -> Vec<usize> {
        self.permutation.original(&self.indices)
    }

    pub fn timings(&self) -> StepTimings {
        let mut t = StepTimings::default();
        for it in &self.iterations {
            t += it.timings;
        }
        t
    }

    /// Final probabilities mapped back to original row order.
    pub fn original_probabilities(&self) -> Option<Vec<f64>> {
        let p = self.probabilities.as_ref()?;
        let mut out = vec![0.0; p.len()];
        for (pos, &orig) in self.permutation.order.iter().enumerate() {
            out[orig] = p[pos];
        }
        Some(out)
    }
}

/// Predictor: a single density fit.
pub fn predictor_select(data: &Dataset, config: &SelectionConfig, executor: &Executor) -> Result<SelectionResult> {
    let mut c = config.clone();
    c.iterations = 1;
    run_pipeline(data, &c, executor)
}

/// Predictor-corrector: `config.iterations` fits with chained scores.
pub fn predictor_corrector_select(
    data: &Dataset,
    config: &SelectionConfig,
    executor: &Executor,
) -> Result<SelectionResult> {
    run_pipeline(data, config, executor)
}

fn seeded_estimator(config: &EstimatorConfig, seed: u64, iteration: usize) -> EstimatorConfig {
    match config {
        EstimatorConfig::Flow(tc) => {
            let mut tc = tc.clone();
            tc.seed = rng::derive(seed, Stream::Train, &[iteration as u64]);
            EstimatorConfig::Flow(tc)
        }
        other => other.clone(),
    }
}

fn run_pipeline(data: &Dataset, config: &SelectionConfig, executor: &Executor) -> Result<SelectionResult> {
    let rows = data.rows();
    config.validate(rows)?;
    let (shuffled, permutation) = shuffle(data, config.seed);
    let subset = random_subset_indices(rows, config.m, config.seed)?;
    let mut working = shuffled.select_rows(&subset)?;
    let n_prime = config.effective_n_prime(rows);
    let mut cumulative = vec![0.0; rows];
    let mut records = Vec::with_capacity(config.iterations);
    let mut model = None;
    let mut final_probs = None;
    let mut indices = Vec::new();

    for it in 0..config.iterations {
        let last = it + 1 == config.iterations;
        let t0 = Instant::now();
        let est = seeded_estimator(&config.estimator, config.seed, it);
        let (fitted, nll_history) = executor.install(|| fit_estimator(&working, &est))?;
        let final_nll = executor.install(|| mean_nll(&fitted, &working));
        let step1_s = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let scores = raw_log_acceptance(&fitted, &shuffled, executor)?;
        for (c, s) in cumulative.iter_mut().zip(&scores) {
            *c += s;
        }
        let step2a_s = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let target = if last { config.n } else { config.m };
        let calibration = calibrate_alpha(&cumulative[..n_prime], rows, target as f64, config.calibration)?;
        let probs = calibration.probabilities(&cumulative);
        let pass_seed = rng::derive(config.seed, Stream::Select, &[it as u64]);
        let outcome = select_pass(&probs, target, pass_seed, config.max_passes, executor)?;
        let step2b_s = t2.elapsed().as_secs_f64();

        records.push(IterationRecord {
            alpha: calibration.alpha(),
            log_alpha: calibration.log_alpha,
            target: target as f64,
            expected: calibration.expected,
            clipped_fraction: calibration.clipped_fraction,
            nll_history,
            final_nll,
            passes: outcome.passes,
            topped_up: outcome.topped_up,
            timings: StepTimings {
                step1_s,
                step2a_s,
                step2b_s,
            },
            cumulative_log_scores: config.keep_scores.then(|| cumulative.clone()),
        });
        if last {
            indices = outcome.indices;
            model = Some(fitted);
            if config.keep_scores {
                final_probs = Some(probs);
            }
        } else {
            working = shuffled.select_rows(&outcome.indices)?;
            if config.corrector == Corrector::Acceptance {
                for c in cumulative.iter_mut() {
                    *c = (calibration.log_alpha + *c).min(0.0);
                }
            }
        }
    }

    Ok(SelectionResult {
        realized_count: indices.len(),
        indices,
        permutation,
        iterations: records,
        probabilities: final_probs,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorSpec};
    use crate::density::{AnalyticDensity, TrainConfig};

    fn ex() -> Executor {
        Executor::new(2).unwrap()
    }

    /// 900 points where p = 0.9 and 100 where p = 0.1.
    fn two_mass_scores() -> Vec<f64> {
        let mut s = vec![-(0.9f64.ln()); 900];
        s.extend(vec![-(0.1f64.ln()); 100]);
        s
    }

    #[test]
    fn two_event_calibration() {
        let p = AcceptanceProfile::calibrate(two_mass_scores(), 100.0, 1000, CalibrationMethod::ClosedForm).unwrap();
        assert!((p.alpha() - 0.05).abs() < 1e-12);
        let probs = p.probabilities();
        assert!((probs[0] - 1.0 / 18.0).abs() < 1e-12);
        assert!((probs[999] - 0.5).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 100.0).abs() < 1e-9);

        let p = AcceptanceProfile::calibrate(two_mass_scores(), 250.0, 1000, CalibrationMethod::Bisection).unwrap();
        assert!((p.alpha() - 0.15).abs() < 1e-9);
        let probs = p.probabilities();
        assert_eq!(probs[999], 1.0);
        assert!((probs[0] - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn raw_scores_are_reciprocal_densities() {
        let u = AnalyticDensity::uniform(vec![0.0], vec![2.0]);
        let d = Dataset::from_values(vec![0.5, 1.0, 1.5], 1).unwrap();
        let s = raw_acceptance(&u, &d, &ex()).unwrap();
        assert!(s.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        // outside the support the density is 0 and the floor applies
        let d = Dataset::from_values(vec![3.0], 1).unwrap();
        let s = raw_acceptance(&u, &d, &ex()).unwrap();
        assert!(s[0].is_finite() && s[0] > 1e200);
    }

    #[test]
    fn density_rescaling_leaves_probabilities_unchanged() {
        let data = generate(&GeneratorSpec::bivariate_normal(5000), 2).unwrap();
        let g = AnalyticDensity::gaussian(vec![1.0, 1.0], vec![1.0, 2.0]);
        let a = exact_pdf_acceptance(&g, &data, 200.0, &ex()).unwrap();
        let shifted: Vec<f64> = a.log_scores.iter().map(|s| s - 2.0f64.ln()).collect();
        let b = AcceptanceProfile::calibrate(shifted, 200.0, 5000, CalibrationMethod::ClosedForm).unwrap();
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            assert!((x - y).abs() < 1e-12);
        }
        // doubling the density doubles alpha
        assert!((b.alpha() / a.alpha() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_gaussian_profile_shape() {
        let data = generate(&GeneratorSpec::Gaussian { mean: vec![0.0], var: vec![1.0], rows: 10_000 }, 1).unwrap();
        let g = AnalyticDensity::gaussian(vec![0.0], vec![1.0]);
        let p100 = exact_pdf_acceptance(&g, &data, 100.0, &ex()).unwrap();
        let p1000 = exact_pdf_acceptance(&g, &data, 1000.0, &ex()).unwrap();
        let clip_edge = |p: &AcceptanceProfile| {
            let probs = p.probabilities();
            data.values()
                .iter()
                .zip(&probs)
                .filter(|(_, &q)| q < 1.0)
                .map(|(x, _)| x.abs())
                .fold(0.0f64, f64::max)
        };
        assert!(clip_edge(&p1000) < clip_edge(&p100));
        let mut pairs: Vec<(f64, f64)> = data.values().iter().map(|&x| (x.abs(), 0.0)).collect();
        for (pr, q) in pairs.iter_mut().zip(p100.probabilities()) {
            pr.1 = q;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    fn hist_config(n: usize, m: usize, bins: usize) -> SelectionConfig {
        SelectionConfig::new(n, m, EstimatorConfig::histogram(bins))
    }

    #[test]
    fn uniform_data_gives_uniform_inclusion() {
        // N = M = N' = 40 distinct points spread evenly, one point per bin
        let values: Vec<f64> = (0..40).map(|i| i as f64 + 0.5).collect();
        let data = Dataset::from_values(values, 1).unwrap();
        let runs = 500;
        let mut hits = vec![0u32; 40];
        for seed in 0..runs {
            let cfg = hist_config(10, 40, 40).with_seed(seed);
            let r = predictor_select(&data, &cfg, &ex()).unwrap();
            for i in r.original_indices() {
                hits[i] += 1;
            }
        }
        let p = 0.25;
        let sigma = (runs as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - runs as f64 * p).abs() <= 3.5 * sigma, "{h}");
        }
    }

    #[test]
    fn n_equal_rows_selects_everything() {
        let data = generate(&GeneratorSpec::surrogate(2, 300), 1).unwrap();
        let r = predictor_select(&data, &hist_config(300, 100, 10), &ex()).unwrap();
        let mut idx = r.original_indices();
        idx.sort();
        assert_eq!(idx, (0..300).collect::<Vec<_>>());
        assert!((r.iterations[0].clipped_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_iteration_matches_predictor() {
        let data = generate(&GeneratorSpec::surrogate(2, 3000), 4).unwrap();
        let tc = TrainConfig {
            steps: 20,
            batch_size: 64,
            hidden: vec![8],
            layers: 2,
            ..TrainConfig::default()
        };
        let cfg = SelectionConfig::new(50, 500, EstimatorConfig::Flow(tc)).with_seed(3);
        let a = predictor_select(&data, &cfg, &ex()).unwrap();
        let b = predictor_corrector_select(&data, &cfg.clone().with_iterations(1), &ex()).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.iterations[0].alpha, b.iterations[0].alpha);
    }

    #[test]
    fn pipeline_invariants() {
        let data = generate(&GeneratorSpec::surrogate(3, 5000), 5).unwrap();
        let cfg = hist_config(200, 1000, 8).with_iterations(3).with_seed(11);
        let r = predictor_corrector_select(&data, &cfg, &ex()).unwrap();
        assert_eq!(r.realized_count, 200);
        assert_eq!(r.iterations.len(), 3);
        assert_eq!(r.iterations[0].target, 1000.0);
        assert_eq!(r.iterations[2].target, 200.0);
        let orig = r.original_indices();
        let mut u = orig.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 200);
        // no new points: every selected row is bitwise a row of the input
        let (shuffled, _) = shuffle(&data, 11);
        for (&pos, &o) in r.indices.iter().zip(&orig) {
            assert_eq!(shuffled.row(pos), data.row(o));
        }
        let again = predictor_corrector_select(&data, &cfg, &Executor::new(1).unwrap()).unwrap();
        assert_eq!(again.indices, r.indices);
    }

    #[test]
    fn invalid_configs_rejected() {
        let data = generate(&GeneratorSpec::surrogate(2, 100), 1).unwrap();
        let e = predictor_select(&data, &hist_config(101, 10, 4), &ex()).unwrap_err();
        assert_eq!(e.code(), "all_points_selected");
        assert!(predictor_select(&data, &hist_config(10, 0, 4), &ex()).is_err());
        assert!(predictor_select(&data, &hist_config(10, 101, 4), &ex()).is_err());
        assert!(predictor_select(&data, &hist_config(0, 10, 4), &ex()).is_err());
    }

    #[test]
    fn corrector_modes_chain_scores() {
        let data = generate(&GeneratorSpec::surrogate(2, 3000), 2).unwrap();
        let (shuffled, _) = shuffle(&data, 9);
        for mode in [Corrector::Acceptance, Corrector::RawProduct] {
            let mut cfg = hist_config(50, 600, 12).with_iterations(2).with_seed(9);
            cfg.keep_scores = true;
            cfg.corrector = mode;
            let r = predictor_corrector_select(&data, &cfg, &ex()).unwrap();
            let first = r.iterations[0].cumulative_log_scores.as_ref().unwrap();
            let second = r.iterations[1].cumulative_log_scores.as_ref().unwrap();
            let fresh = raw_log_acceptance(r.model.as_ref().unwrap(), &shuffled, &ex()).unwrap();
            let la = r.iterations[0].log_alpha;
            for i in 0..first.len() {
                let carried = match mode {
                    Corrector::Acceptance => (la + first[i]).min(0.0),
                    Corrector::RawProduct => first[i],
                };
                assert_eq!(second[i], carried + fresh[i]);
            }
        }
    }
}
