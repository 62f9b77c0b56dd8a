//! Experiment harness: repeated method comparisons, sweeps and the
//! figure-style exports, written as CSV/JSON.
//!
//! Every cell draws its seeds from `(master seed, cell label, repetition)`,
//! so adding or removing cells never changes the results of the others.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    brute_force_max_criterion, full_binning_select, kmeans, random_sample, stratified_sample, KMeansModel,
};
use crate::data::{fit_rescaler, generate, load_dataset, save_dataset, Dataset, Format, GeneratorSpec, ScalingTransform};
use crate::density::{AnalyticDensity, DensityModel, EstimatorConfig, FittedModel};
use crate::error::{Error, Result};
use crate::metrics::{conditional_acceptance_error, distance_criterion_with, mean_std, ConditionalErrorCurve, CRITERION_RANGE};
use crate::parallel::Executor;
use crate::rng::{self, Stream};
use crate::selection::{
    exact_pdf_acceptance, predictor_corrector_select, select_pass, AcceptanceProfile, CalibrationMethod,
    SelectionConfig, StepTimings,
};

/// Lloyd iteration cap used by the stratified baseline.
pub const KMEANS_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Single density fit.
    Predictor,
    PredictorCorrector { iterations: usize },
    Random,
    /// Equal-quota stratified sampling over k-means clusters.
    Stratified { clusters: usize },
    BruteForce { iterations: usize },
    /// Histogram over the full dataset.
    FullBinning { bins: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Predictor => "algo1".into(),
            Method::PredictorCorrector { iterations } => format!("algo2-{iterations}it"),
            Method::Random => "random".into(),
            Method::Stratified { clusters } => format!("stratified-k{clusters}"),
            Method::BruteForce { iterations } => format!("bruteforce-{iterations}"),
            Method::FullBinning { bins } => format!("binning-b{bins}"),
        }
    }

    /// Parses labels as produced by [`Method::label`].
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown method {s:?}"));
        let num = |rest: &str| rest.parse::<usize>().map_err(|_| bad());
        Ok(match s {
            "algo1" | "predictor" => Method::Predictor,
            "random" => Method::Random,
            _ if s.starts_with("algo2-") && s.ends_with("it") => Method::PredictorCorrector {
                iterations: num(&s[6..s.len() - 2])?,
            },
            _ if s.starts_with("stratified-k") => Method::Stratified { clusters: num(&s[12..])? },
            _ if s.starts_with("bruteforce-") => Method::BruteForce { iterations: num(&s[11..])? },
            _ if s.starts_with("binning-b") => Method::FullBinning { bins: num(&s[9..])? },
            _ => return Err(bad()),
        })
    }

    fn uses_working_set(&self) -> bool {
        matches!(self, Method::Predictor | Method::PredictorCorrector { .. })
    }

    fn iterations(&self) -> Option<usize> {
        match self {
            Method::Predictor => Some(1),
            Method::PredictorCorrector { iterations } => Some(*iterations),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Generate { spec: GeneratorSpec, seed: u64 },
    File { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Generate { spec, seed } => generate(spec, *seed),
            DataSource::File { path } => load_dataset(path, Format::from_path(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub estimator: EstimatorConfig,
    pub repetitions: usize,
    pub seed: u64,
    /// Where CSV/JSON outputs go; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
    /// Export the selected rows of the first repetition of each cell.
    pub scatter: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.methods.is_empty() || self.n_grid.is_empty() {
            return Err(Error::invalid("method list and n grid must be non-empty"));
        }
        if self.methods.iter().any(Method::uses_working_set) && self.m_grid.is_empty() {
            return Err(Error::invalid("M grid must be non-empty for density-based methods"));
        }
        Ok(())
    }
}

/// Seed for repetition `rep` of the cell named `label`.
pub fn cell_seed(master: u64, label: &str, rep: usize) -> u64 {
    // FNV-1a keeps the cell id stable across builds and platforms
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    rng::derive(master, Stream::Experiment, &[h, rep as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub n: usize,
    pub dims: usize,
    pub m: Option<usize>,
    pub iterations: Option<usize>,
    pub criteria: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Mean divided by the `algo1` mean at the same `n` (and `M`).
    pub normalized_mean: Option<f64>,
    /// Mean over repetitions.
    pub timings: StepTimings,
    pub total_s: f64,
    /// Final training NLL per iteration, averaged over repetitions.
    pub final_nll: Vec<f64>,
}

impl CellResult {
    fn key(&self) -> String {
        match self.m {
            Some(m) => format!("{}_n{}_m{}", self.method, self.n, m),
            None => format!("{}_n{}", self.method, self.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub id: String,
    pub cells: Vec<CellResult>,
}

impl ExperimentOutcome {
    pub fn cell(&self, method: &str, n: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,n,dims,m,iters,mean_criterion,std_criterion,normalized_mean,step1_s,step2a_s,step2b_s,total_s,repetitions\n",
        );
        let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.method,
                c.n,
                c.dims,
                opt(c.m),
                opt(c.iterations),
                c.mean,
                c.std,
                c.normalized_mean.map_or(String::new(), |v| v.to_string()),
                c.timings.step1_s,
                c.timings.step2a_s,
                c.timings.step2b_s,
                c.total_s,
                c.criteria.len()
            );
        }
        out
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct Harness<'a> {
    spec: &'a ExperimentSpec,
    data: Dataset,
    parent: ScalingTransform,
    clusterings: BTreeMap<usize, KMeansModel>,
    executor: &'a Executor,
}

struct RunOutput {
    original_indices: Vec<usize>,
    timings: StepTimings,
    final_nll: Vec<f64>,
}

impl Harness<'_> {
    fn clustering(&mut self, k: usize) -> Result<&KMeansModel> {
        if !self.clusterings.contains_key(&k) {
            let seed = rng::derive(self.spec.seed, Stream::KMeans, &[k as u64]);
            let model = self.executor.install(|| kmeans(&self.data, k, seed, KMEANS_MAX_ITERS))?;
            self.clusterings.insert(k, model);
        }
        Ok(&self.clusterings[&k])
    }

    fn run_once(&mut self, method: &Method, n: usize, m: Option<usize>, seed: u64) -> Result<RunOutput> {
        let rows = self.data.rows();
        let plain = |indices| RunOutput {
            original_indices: indices,
            timings: StepTimings::default(),
            final_nll: Vec::new(),
        };
        Ok(match method {
            Method::Predictor | Method::PredictorCorrector { .. } => {
                let mut cfg = SelectionConfig::new(n, m.expect("working size"), self.spec.estimator.clone())
                    .with_iterations(method.iterations().expect("density method"))
                    .with_seed(seed);
                cfg.calibration = CalibrationMethod::ClosedForm;
                let r = predictor_corrector_select(&self.data, &cfg, self.executor)?;
                RunOutput {
                    original_indices: r.original_indices(),
                    timings: r.timings(),
                    final_nll: r.iterations.iter().map(|i| i.final_nll).collect(),
                }
            }
            Method::Random => plain(random_sample(rows, n, seed)?),
            Method::Stratified { clusters } => {
                let k = *clusters;
                let model = self.clustering(k)?.clone();
                plain(stratified_sample(&self.data, &model, n, seed)?)
            }
            Method::BruteForce { iterations } => {
                let parent = self.parent.clone();
                let data = &self.data;
                let bf = self
                    .executor
                    .install(|| brute_force_max_criterion(data, n, *iterations, seed, Some(&parent)))?;
                plain(bf.indices)
            }
            Method::FullBinning { bins } => {
                let r = full_binning_select(&self.data, n, *bins, seed, None, self.executor)?;
                RunOutput {
                    original_indices: r.original_indices(),
                    timings: r.timings(),
                    final_nll: r.iterations.iter().map(|i| i.final_nll).collect(),
                }
            }
        })
    }

    fn run_cell(&mut self, method: &Method, n: usize, m: Option<usize>) -> Result<CellResult> {
        let label = method.label();
        let key = match m {
            Some(m) => format!("{label}_n{n}_m{m}"),
            None => format!("{label}_n{n}"),
        };
        let mut criteria = Vec::with_capacity(self.spec.repetitions);
        let mut timings = StepTimings::default();
        let mut total_s = 0.0;
        let mut nll_sum: Vec<f64> = Vec::new();
        for rep in 0..self.spec.repetitions {
            let seed = cell_seed(self.spec.seed, &key, rep);
            let t0 = Instant::now();
            let out = self.run_once(method, n, m, seed)?;
            total_s += t0.elapsed().as_secs_f64();
            timings += out.timings;
            if nll_sum.len() < out.final_nll.len() {
                nll_sum.resize(out.final_nll.len(), 0.0);
            }
            for (s, v) in nll_sum.iter_mut().zip(&out.final_nll) {
                *s += v;
            }
            let subset = self.data.select_rows(&out.original_indices)?;
            criteria.push(self.executor.install(|| distance_criterion_with(&subset, &self.parent))?);
            if rep == 0 && self.spec.scatter {
                if let Some(dir) = &self.spec.output_dir {
                    save_dataset(&subset, dir.join(format!("scatter_{key}.csv")), Format::Csv)?;
                }
            }
        }
        let reps = self.spec.repetitions as f64;
        let (mean, std) = mean_std(&criteria);
        Ok(CellResult {
            method: label,
            n,
            dims: self.data.dims(),
            m,
            iterations: method.iterations(),
            criteria,
            mean,
            std,
            normalized_mean: None,
            timings: StepTimings {
                step1_s: timings.step1_s / reps,
                step2a_s: timings.step2a_s / reps,
                step2b_s: timings.step2b_s / reps,
            },
            total_s: total_s / reps,
            final_nll: nll_sum.iter().map(|s| s / reps).collect(),
        })
    }
}

fn normalize(cells: &mut [CellResult]) {
    let refs: Vec<(usize, Option<usize>, f64)> = cells
        .iter()
        .filter(|c| c.method == "algo1")
        .map(|c| (c.n, c.m, c.mean))
        .collect();
    for c in cells.iter_mut() {
        let r = refs
            .iter()
            .find(|r| r.0 == c.n && (c.m.is_none() || r.1 == c.m))
            .map(|r| r.2);
        c.normalized_mean = r.filter(|&v| v > 0.0).map(|v| c.mean / v);
    }
}

/// Runs every `(n, M, method)` cell `repetitions` times and records the
/// distance criterion (rescaled with a transform fit on the full dataset).
/// With an output directory, writes `cells.csv` and `experiment.json`; on
/// failure the finished cells are still written next to `failure.json`.
pub fn run_experiment(spec: &ExperimentSpec, executor: &Executor) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if let Some(dir) = &spec.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let data = spec.source.load()?;
    let parent = fit_rescaler(&data, CRITERION_RANGE.0, CRITERION_RANGE.1)?;
    let mut h = Harness {
        spec,
        data,
        parent,
        clusterings: BTreeMap::new(),
        executor,
    };
    let mut outcome = ExperimentOutcome {
        id: spec.id.clone(),
        cells: Vec::new(),
    };
    let mut failure = None;
    'grid: for &n in &spec.n_grid {
        for method in &spec.methods {
            let ms: Vec<Option<usize>> = if method.uses_working_set() {
                spec.m_grid.iter().map(|&m| Some(m)).collect()
            } else {
                vec![None]
            };
            for m in ms {
                match h.run_cell(method, n, m) {
                    Ok(cell) => outcome.cells.push(cell),
                    Err(e) => {
                        failure = Some((method.label(), n, m, e));
                        break 'grid;
                    }
                }
            }
        }
    }
    normalize(&mut outcome.cells);
    if let Some(dir) = &spec.output_dir {
        write_file(&dir.join("cells.csv"), &outcome.to_csv())?;
        let json = serde_json::to_string_pretty(&outcome).map_err(|e| Error::invalid(e.to_string()))?;
        write_file(&dir.join("experiment.json"), &json)?;
        if let Some((method, n, m, e)) = &failure {
            let manifest = serde_json::json!({
                "experiment": spec.id,
                "failed_cell": { "method": method, "n": n, "m": m },
                "error": e.to_string(),
                "code": e.code(),
                "completed_cells": outcome.cells.iter().map(CellResult::key).collect::<Vec<_>>(),
            });
            write_file(&dir.join("failure.json"), &manifest.to_string())?;
        }
    }
    match failure {
        Some((_, _, _, e)) => Err(e),
        None => Ok(outcome),
    }
}

/// Named grids. `scale` shrinks the problem (1.0 = desk-scale defaults).
pub fn preset(id: &str, estimator: EstimatorConfig, repetitions: usize, seed: u64) -> Result<ExperimentSpec> {
    let surrogate = |dims, rows| DataSource::Generate {
        spec: GeneratorSpec::surrogate(dims, rows),
        seed,
    };
    let base = |source, methods, n_grid, m_grid| ExperimentSpec {
        id: id.to_string(),
        source,
        methods,
        n_grid,
        m_grid,
        estimator: estimator.clone(),
        repetitions,
        seed,
        output_dir: None,
        scatter: false,
    };
    Ok(match id {
        "table1-ordering" => base(
            surrogate(2, 1_000_000),
            vec![
                Method::PredictorCorrector { iterations: 2 },
                Method::Predictor,
                Method::PredictorCorrector { iterations: 3 },
                Method::Stratified { clusters: 40 },
                Method::Random,
            ],
            vec![1000],
            vec![100_000],
        ),
        "table2-dims" => base(
            surrogate(3, 1_000_000),
            vec![
                Method::Predictor,
                Method::PredictorCorrector { iterations: 2 },
                Method::Random,
                Method::Stratified { clusters: 40 },
                Method::FullBinning { bins: 100 },
            ],
            vec![1000],
            vec![100_000],
        ),
        "sweep-m" => base(
            surrogate(2, 1_000_000),
            vec![Method::Predictor, Method::PredictorCorrector { iterations: 2 }],
            vec![1000],
            vec![10_000, 30_000, 100_000],
        ),
        "sweep-iters" => base(
            surrogate(2, 1_000_000),
            (1..=4)
                .map(|i| {
                    if i == 1 {
                        Method::Predictor
                    } else {
                        Method::PredictorCorrector { iterations: i }
                    }
                })
                .collect(),
            vec![1000],
            vec![100_000],
        ),
        other => return Err(Error::invalid(format!("unknown experiment {other:?}"))),
    })
}

/// Averaged selection histogram for one target count of the exact-pdf experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageHistogram {
    pub n: usize,
    pub alpha: f64,
    /// Smallest `|x|` with saturated acceptance.
    pub clip_edge: f64,
    /// Equal-width bins over the data range.
    pub bin_centers: Vec<f64>,
    pub mean_counts: Vec<f64>,
    /// Bins lying entirely inside `(-clip_edge, clip_edge)`.
    pub unclipped: Vec<bool>,
}

impl CoverageHistogram {
    /// Max over min of the mean counts across the unclipped bins.
    pub fn max_min_ratio(&self) -> f64 {
        let inner = self.mean_counts.iter().zip(&self.unclipped).filter(|(_, &u)| u).map(|(c, _)| *c);
        let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
        for c in inner {
            max = max.max(c);
            min = min.min(c);
        }
        max / min
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center,mean_count,unclipped\n");
        for ((c, m), u) in self.bin_centers.iter().zip(&self.mean_counts).zip(&self.unclipped) {
            let _ = writeln!(s, "{c},{m},{}", *u as u8);
        }
        s
    }
}

/// 1D standard normal with exact-pdf acceptance and repeated selection.
/// Returns, per target, the selected-sample histogram averaged over the
/// repetitions.
pub fn coverage_experiment(
    rows: usize,
    targets: &[usize],
    repetitions: usize,
    bins: usize,
    seed: u64,
    executor: &Executor,
    output_dir: Option<&Path>,
) -> Result<Vec<CoverageHistogram>> {
    if bins == 0 || repetitions == 0 {
        return Err(Error::invalid("bins and repetitions must be positive"));
    }
    let spec = GeneratorSpec::Gaussian {
        mean: vec![0.0],
        var: vec![1.0],
        rows,
    };
    let data = generate(&spec, seed)?;
    let pdf = AnalyticDensity::gaussian(vec![0.0], vec![1.0]);
    let (lo, hi) = data
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let width = (hi - lo) / bins as f64;
    let mut out = Vec::new();
    for &n in targets {
        let profile = exact_pdf_acceptance(&pdf, &data, n as f64, executor)?;
        let probs = profile.probabilities();
        let clip_edge = data
            .values()
            .iter()
            .zip(&probs)
            .filter(|(_, &p)| p >= 1.0)
            .map(|(x, _)| x.abs())
            .fold(f64::INFINITY, f64::min);
        let mut counts = vec![0.0; bins];
        for rep in 0..repetitions {
            let s = cell_seed(seed, &format!("coverage_n{n}"), rep);
            let sel = select_pass(&probs, n, s, crate::selection::DEFAULT_MAX_PASSES, executor)?;
            for i in sel.indices {
                let b = (((data.values()[i] - lo) / width) as usize).min(bins - 1);
                counts[b] += 1.0;
            }
        }
        let hist = CoverageHistogram {
            n,
            alpha: profile.alpha(),
            clip_edge,
            bin_centers: (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect(),
            mean_counts: counts.iter().map(|c| c / repetitions as f64).collect(),
            unclipped: (0..bins)
                .map(|b| {
                    let (l, r) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
                    l > -clip_edge && r < clip_edge
                })
                .collect(),
        };
        if let Some(dir) = output_dir {
            write_file(&dir.join(format!("coverage_n{n}.csv")), &hist.to_csv())?;
            write_profile(&dir.join(format!("acceptance_n{n}.csv")), &data, &profile)?;
        }
        out.push(hist);
    }
    Ok(out)
}

fn write_profile(path: &Path, data: &Dataset, profile: &AcceptanceProfile) -> Result<()> {
    let mut s = String::from("x,log_score,probability\n");
    for ((x, l), p) in data.values().iter().zip(&profile.log_scores).zip(profile.probabilities()) {
        let _ = writeln!(s, "{x},{l},{p}");
    }
    write_file(path, &s)
}

/// Step 2a wall-time for each dataset size (minimum over repetitions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub rows: usize,
    pub workers: usize,
    pub step2a_s: f64,
}

/// Times density evaluation of `model` on surrogate data of each size.
pub fn scaling_experiment(
    model: &FittedModel,
    sizes: &[usize],
    repetitions: usize,
    seed: u64,
    executor: &Executor,
) -> Result<Vec<ScalingPoint>> {
    let dims = model.dims();
    let mut out = Vec::new();
    for &rows in sizes {
        let data = generate(&GeneratorSpec::surrogate(dims, rows), seed)?;
        let mut best = f64::INFINITY;
        for _ in 0..repetitions.max(1) {
            let t0 = Instant::now();
            let scores = executor.log_densities(model, &data)?;
            best = best.min(t0.elapsed().as_secs_f64());
            std::hint::black_box(scores);
        }
        out.push(ScalingPoint {
            rows,
            workers: executor.workers(),
            step2a_s: best,
        });
    }
    Ok(out)
}

/// Error curves of one predictor-corrector run plus its per-iteration training NLL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurveRun {
    pub curves: Vec<ConditionalErrorCurve>,
    pub final_nll: Vec<f64>,
}

/// Conditional acceptance-error curves of each predictor-corrector
/// iteration against the exact pdf, all calibrated to the final target `n`.
pub fn error_curves(
    data: &Dataset,
    pdf: &AnalyticDensity,
    config: &SelectionConfig,
    bins: usize,
    executor: &Executor,
) -> Result<ErrorCurveRun> {
    let mut cfg = config.clone();
    cfg.keep_scores = true;
    let result = predictor_corrector_select(data, &cfg, executor)?;
    let exact = exact_pdf_acceptance(pdf, data, config.n as f64, executor)?.probabilities();
    let n_prime = config.effective_n_prime(data.rows());
    let order = &result.permutation.order;
    let curves = result
        .iterations
        .iter()
        .map(|it| {
            let shuffled = it.cumulative_log_scores.clone().expect("scores kept");
            let profile = AcceptanceProfile::calibrate(shuffled, config.n as f64, n_prime, config.calibration)?;
            let est_shuffled = profile.probabilities();
            let mut est = vec![0.0; est_shuffled.len()];
            for (pos, &orig) in order.iter().enumerate() {
                est[orig] = est_shuffled[pos];
            }
            conditional_acceptance_error(&exact, &est, bins)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurveRun {
        curves,
        final_nll: result.iterations.iter().map(|i| i.final_nll).collect(),
    })
}
