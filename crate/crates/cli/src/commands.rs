use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phasefold_core::baselines::{
    brute_force_max_criterion, full_binning_select, kmeans, random_sample, stratified_sample, subset_criterion,
};
use phasefold_core::data::{
    fit_rescaler, generate as generate_rows, load_dataset, random_subset, save_dataset, Dataset, Format, GeneratorSpec,
    ScalingTransform,
};
use phasefold_core::density::{fit_estimator, mean_nll, save_model, DEFAULT_MEMORY_CAP};
use phasefold_core::experiment::{
    coverage_experiment, error_curves, preset, run_experiment, scaling_experiment, Method, KMEANS_MAX_ITERS,
};
use phasefold_core::metrics::{distance_criterion, distance_criterion_with, mean_std, nearest_neighbors, CRITERION_RANGE};
use phasefold_core::parallel::available_workers;
use phasefold_core::rng::{self, Stream};
use phasefold_core::selection::Corrector;
use phasefold_core::{
    predictor_corrector_select, EstimatorConfig, Executor, RunReport, SelectionConfig, SelectionResult, TrainConfig,
};
use serde_json::json;

use crate::{
    BaselineArgs, BenchArgs, CliError, CorrectorKind, DataArgs, EstimatorArgs, EstimatorKind, Experiment, FitArgs,
    GenerateArgs, MetricArgs, RescaleMode, RunArgs, SampleArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

pub fn generator(name: &str, rows: usize) -> CliResult<GeneratorSpec> {
    let spec = match name {
        "gaussian1d" => GeneratorSpec::Gaussian {
            mean: vec![0.0],
            var: vec![1.0],
            rows,
        },
        "gaussian2d" => GeneratorSpec::bivariate_normal(rows),
        "sinusoid" => GeneratorSpec::SinusoidLabeled { rows, noise: 0.1 },
        _ => match name.strip_prefix("surrogate").map(str::parse::<usize>) {
            Some(Ok(d)) if (1..=5).contains(&d) => GeneratorSpec::surrogate(d, rows),
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown generator {name:?} (gaussian1d, gaussian2d, surrogate1..surrogate5, sinusoid)"
                )))
            }
        },
    };
    Ok(spec)
}

fn load(data: &DataArgs, seed: u64) -> CliResult<Dataset> {
    match (&data.input, &data.generate) {
        (Some(path), _) => Ok(load_dataset(path, Format::from_path(path))?),
        (None, Some(name)) => Ok(generate_rows(&generator(name, data.rows)?, data.data_seed.unwrap_or(seed))?),
        (None, None) => Err(CliError::Usage("one of --input or --generate is required".into())),
    }
}

fn source_echo(data: &DataArgs, seed: u64) -> serde_json::Value {
    match (&data.input, &data.generate) {
        (Some(path), _) => json!({ "input": path }),
        (None, generator) => json!({
            "generate": generator,
            "rows": data.rows,
            "data_seed": data.data_seed.unwrap_or(seed),
        }),
    }
}

fn executor(run: &RunArgs) -> CliResult<Executor> {
    Ok(Executor::new(run.workers.unwrap_or_else(available_workers))?)
}

fn estimator(args: &EstimatorArgs, seed: u64) -> EstimatorConfig {
    match args.estimator {
        EstimatorKind::Hist => EstimatorConfig::Histogram {
            bins: args.bins,
            memory_cap: args.memory_cap.unwrap_or(DEFAULT_MEMORY_CAP),
        },
        EstimatorKind::Flow => {
            let mut tc = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(s) = args.steps {
                tc.steps = s;
            }
            if let Some(b) = args.batch {
                tc.batch_size = b;
            }
            if let Some(lr) = args.lr {
                tc.learning_rate = lr;
            }
            if let Some(l) = args.layers {
                tc.layers = l;
            }
            EstimatorConfig::Flow(tc)
        }
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_indices(path: &Path, indices: &[usize]) -> CliResult {
    let mut text = String::with_capacity(indices.len() * 8);
    for i in indices {
        let _ = writeln!(text, "{i}");
    }
    write_text(path, &text)
}

/// Reads one index per line; blank lines and `#` comments are skipped.
pub fn read_indices(path: &Path, rows: usize) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let index: u64 = line.parse().map_err(|_| {
            CliError::Core(phasefold_core::Error::NonNumeric {
                line: no + 1,
                column: 1,
                cell: line.to_string(),
            })
        })?;
        if index >= rows as u64 {
            return Err(phasefold_core::Error::IndexOutOfRange { index, rows }.into());
        }
        out.push(index as usize);
    }
    Ok(out)
}

fn parent_rescaler(data: &Dataset) -> CliResult<ScalingTransform> {
    Ok(fit_rescaler(data, CRITERION_RANGE.0, CRITERION_RANGE.1)?)
}

fn finish_report(mut report: RunReport, data: &Dataset, indices: &[usize], path: Option<&PathBuf>) -> CliResult<f64> {
    let parent = parent_rescaler(data)?;
    let criterion = if indices.len() >= 2 {
        subset_criterion(data, indices, &parent)?
    } else {
        f64::NAN
    };
    if let Some(path) = path {
        if criterion.is_finite() {
            report.metrics.insert("distance_criterion".into(), criterion);
        }
        report.criterion_rescale = Some("parent".into());
        report.degenerate_dims = parent.degenerate_dims();
        report.write(path)?;
    }
    Ok(criterion)
}

pub fn generate(args: &GenerateArgs) -> CliResult {
    let Some(name) = &args.data.generate else {
        return Err(CliError::Usage("generate needs --generate NAME".into()));
    };
    let data = generate_rows(&generator(name, args.data.rows)?, args.data.data_seed.unwrap_or(args.seed))?;
    save_dataset(&data, &args.out, Format::from_path(&args.out))?;
    println!("wrote {} rows x {} columns to {}", data.rows(), data.dims(), args.out.display());
    Ok(())
}

pub fn fit(args: &FitArgs) -> CliResult {
    let seed = args.run.seed;
    let data = load(&args.data, seed)?;
    let ex = executor(&args.run)?;
    let working = match args.m {
        Some(m) => random_subset(&data, m, rng::derive(seed, Stream::Subset, &[]))?,
        None => data,
    };
    let config = estimator(&args.estimator, seed);
    let t0 = Instant::now();
    let (model, history) = ex.install(|| fit_estimator(&working, &config))?;
    let secs = t0.elapsed().as_secs_f64();
    save_model(&model, &args.model)?;
    println!(
        "{} fit on {} rows in {secs:.2}s: mean NLL {:.6} ({} steps); saved {}",
        config.name(),
        working.rows(),
        mean_nll(&model, &working),
        history.len(),
        args.model.display()
    );
    Ok(())
}

pub fn sample(args: &SampleArgs) -> CliResult {
    let seed = args.run.seed;
    let data = load(&args.data, seed)?;
    let ex = executor(&args.run)?;
    let m = args.m.unwrap_or_else(|| data.rows().min(100_000));
    let mut cfg = SelectionConfig::new(args.n, m, estimator(&args.estimator, seed))
        .with_iterations(args.iters)
        .with_seed(seed);
    cfg.n_prime = args.nprime;
    cfg.corrector = match args.corrector {
        CorrectorKind::Acceptance => Corrector::Acceptance,
        CorrectorKind::RawProduct => Corrector::RawProduct,
    };
    let result = predictor_corrector_select(&data, &cfg, &ex)?;
    let indices = result.original_indices();
    if let Some(path) = &args.out {
        write_indices(path, &indices)?;
    }
    if let Some(path) = &args.selected {
        save_dataset(&data.select_rows(&indices)?, path, Format::from_path(path))?;
    }
    let method = if args.iters == 1 { "algo1".to_string() } else { format!("algo2-{}it", args.iters) };
    let config = json!({ "selection": cfg, "source": source_echo(&args.data, seed) });
    let report = RunReport::new(&method, config, seed, ex.workers(), data.rows(), data.dims()).with_selection(&result);
    let criterion = finish_report(report, &data, &indices, args.report.as_ref())?;
    print_selection(&method, &data, &result, criterion);
    Ok(())
}

fn print_selection(method: &str, data: &Dataset, result: &SelectionResult, criterion: f64) {
    println!(
        "{method}: selected {} of {} rows; distance criterion {criterion:.6}",
        result.realized_count,
        data.rows()
    );
    for (i, it) in result.iterations.iter().enumerate() {
        println!(
            "  iteration {}: alpha {:.6e}, clipped {:.4}, final NLL {:.6}, step1 {:.2}s step2a {:.2}s step2b {:.2}s",
            i + 1,
            it.alpha,
            it.clipped_fraction,
            it.final_nll,
            it.timings.step1_s,
            it.timings.step2a_s,
            it.timings.step2b_s
        );
    }
}

pub fn metric(args: &MetricArgs) -> CliResult {
    let data = load(&args.data, args.seed)?;
    let parent = parent_rescaler(&data)?;
    let mut values = Vec::with_capacity(args.indices.len());
    for (k, path) in args.indices.iter().enumerate() {
        let idx = read_indices(path, data.rows())?;
        let subset = data.select_rows(&idx)?;
        let c = match args.rescale {
            RescaleMode::Parent => distance_criterion_with(&subset, &parent)?,
            RescaleMode::Subset => distance_criterion(&subset, true)?,
            RescaleMode::None => distance_criterion(&subset, false)?,
        };
        if k == 0 {
            if let Some(out) = &args.nn_out {
                let points = match args.rescale {
                    RescaleMode::Parent => parent.apply(&subset)?,
                    RescaleMode::Subset => parent_rescaler(&subset)?.apply(&subset)?,
                    RescaleMode::None => subset.clone(),
                };
                let mut csv = String::from("row,neighbor,distance\n");
                for (i, nb) in nearest_neighbors(&points)?.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{}", idx[i], idx[nb.index], nb.distance);
                }
                write_text(out, &csv)?;
            }
        }
        println!("{}: {c}", path.display());
        values.push(c);
    }
    if values.len() > 1 {
        let (mean, std) = mean_std(&values);
        println!("mean ± std over {} runs: {mean:.6} ± {std:.6}", values.len());
    }
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> CliResult {
    let seed = args.run.seed;
    let data = load(&args.data, seed)?;
    let ex = executor(&args.run)?;
    let method = Method::parse(&args.method).map_err(|e| CliError::Usage(e.to_string()))?;
    let config = json!({ "method": &method, "n": args.n, "source": source_echo(&args.data, seed) });
    let report = RunReport::new(&method.label(), config, seed, ex.workers(), data.rows(), data.dims());
    let (indices, report) = match method {
        Method::Random => (random_sample(data.rows(), args.n, seed)?, report),
        Method::Stratified { clusters } => {
            let km_seed = rng::derive(seed, Stream::KMeans, &[clusters as u64]);
            let km = ex.install(|| kmeans(&data, clusters, km_seed, KMEANS_MAX_ITERS))?;
            (stratified_sample(&data, &km, args.n, seed)?, report)
        }
        Method::BruteForce { iterations } => {
            let parent = parent_rescaler(&data)?;
            let bf = ex.install(|| brute_force_max_criterion(&data, args.n, iterations, seed, Some(&parent)))?;
            (bf.indices, report)
        }
        Method::FullBinning { bins } => {
            let r = full_binning_select(&data, args.n, bins, seed, None, &ex)?;
            (r.original_indices(), report.with_selection(&r))
        }
        Method::Predictor | Method::PredictorCorrector { .. } => {
            return Err(CliError::Usage(format!("{} is not a baseline; use `sample`", args.method)))
        }
    };
    let mut report = report;
    report.realized_count = indices.len();
    if let Some(path) = &args.out {
        write_indices(path, &indices)?;
    }
    let criterion = finish_report(report, &data, &indices, args.report.as_ref())?;
    println!("{}: selected {} of {} rows; distance criterion {criterion:.6}", method.label(), indices.len(), data.rows());
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

pub fn bench(args: &BenchArgs) -> CliResult {
    let seed = args.run.seed;
    let ex = executor(&args.run)?;
    let est = estimator(&args.estimator, seed);
    create_dir(&args.out)?;
    let t0 = Instant::now();
    match args.experiment {
        Experiment::Table1Ordering | Experiment::Table2Dims | Experiment::SweepM | Experiment::SweepIters => {
            let id = match args.experiment {
                Experiment::Table1Ordering => "table1-ordering",
                Experiment::Table2Dims => "table2-dims",
                Experiment::SweepM => "sweep-m",
                _ => "sweep-iters",
            };
            let mut spec = preset(id, est, args.reps.unwrap_or(5), seed)?;
            spec.output_dir = Some(args.out.clone());
            spec.scatter = args.scatter;
            let outcome = run_experiment(&spec, &ex)?;
            print!("{}", outcome.to_csv());
        }
        Experiment::Coverage => {
            let hists = coverage_experiment(10_000, &[100, 1000], args.reps.unwrap_or(100), 20, seed, &ex, Some(&args.out))?;
            for h in &hists {
                println!(
                    "n={}: clip edge {:.4}, max/min over unclipped bins {:.4}",
                    h.n,
                    h.clip_edge,
                    h.max_min_ratio()
                );
            }
        }
        Experiment::Scaling => {
            let train = generate_rows(&GeneratorSpec::surrogate(2, 10_000), seed)?;
            let (model, _) = ex.install(|| fit_estimator(&train, &est))?;
            let points = scaling_experiment(&model, &[100_000, 1_000_000], args.reps.unwrap_or(3), seed, &ex)?;
            let mut csv = String::from("rows,workers,step2a_s\n");
            for p in &points {
                let _ = writeln!(csv, "{},{},{}", p.rows, p.workers, p.step2a_s);
            }
            write_text(&args.out.join("scaling.csv"), &csv)?;
            print!("{csv}");
        }
        Experiment::ErrorCurves => {
            let spec = GeneratorSpec::bivariate_normal(1_000_000);
            let data = generate_rows(&spec, seed)?;
            let pdf = spec.density().expect("analytic density");
            let mut summary = String::from("rep,iteration,final_nll,top_decile_rel_err\n");
            for rep in 0..args.reps.unwrap_or(5) {
                let cfg = SelectionConfig::new(1000, 100_000, est.clone())
                    .with_iterations(2)
                    .with_seed(rng::derive(seed, Stream::Experiment, &[rep as u64]));
                let run = error_curves(&data, &pdf, &cfg, 20, &ex)?;
                for (it, curve) in run.curves.iter().enumerate() {
                    curve.write_csv(args.out.join(format!("error_curve_rep{rep}_it{}.csv", it + 1)))?;
                    let top = curve.top_range_rel_err(0.1).unwrap_or(f64::NAN);
                    let _ = writeln!(summary, "{rep},{},{},{top}", it + 1, run.final_nll[it]);
                }
            }
            write_text(&args.out.join("error_curves.csv"), &summary)?;
            print!("{summary}");
        }
    }
    eprintln!("done in {:.1}s; outputs in {}", t0.elapsed().as_secs_f64(), args.out.display());
    Ok(())
}
