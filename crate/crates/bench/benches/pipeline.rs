use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use phasefold_bench::{quick_flow, surrogate, trained_flow};
use phasefold_core::density::{fit_estimator, fit_histogram, DEFAULT_MEMORY_CAP};
use phasefold_core::metrics::nearest_neighbors;
use phasefold_core::rng::{self, Stream};
use phasefold_core::selection::{calibrate_alpha, CalibrationMethod};
use phasefold_core::{EstimatorConfig, Executor};

fn step2a(c: &mut Criterion) {
    let ex = Executor::new(1).unwrap();
    let flow = trained_flow(2);
    let mut g = c.benchmark_group("step2a");
    g.sample_size(10);
    for rows in [10_000usize, 100_000] {
        let data = surrogate(2, rows);
        g.throughput(Throughput::Elements(rows as u64));
        g.bench_with_input(BenchmarkId::new("flow", rows), &data, |b, d| {
            b.iter(|| black_box(ex.log_densities(&flow, d).unwrap()))
        });
        let hist = fit_histogram(&data, 50, DEFAULT_MEMORY_CAP).unwrap();
        g.bench_with_input(BenchmarkId::new("histogram", rows), &data, |b, d| {
            b.iter(|| black_box(ex.log_densities(&hist, d).unwrap()))
        });
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let mut g = c.benchmark_group("calibration");
    for len in [10_000usize, 100_000] {
        let scores: Vec<f64> = (0..len)
            .map(|i| 3.0 * rng::normal(7, Stream::Generate, &[i as u64]))
            .collect();
        let target = len as f64 / 100.0;
        for method in [CalibrationMethod::ClosedForm, CalibrationMethod::Bisection] {
            g.bench_with_input(BenchmarkId::new(format!("{method:?}"), len), &scores, |b, s| {
                b.iter(|| black_box(calibrate_alpha(s, len * 10, target, method).unwrap()))
            });
        }
    }
    g.finish();
}

fn kdtree(c: &mut Criterion) {
    let mut g = c.benchmark_group("nearest_neighbors");
    for (dims, rows) in [(2usize, 1_000usize), (2, 10_000), (5, 10_000)] {
        let data = surrogate(dims, rows);
        g.bench_with_input(BenchmarkId::new(format!("d{dims}"), rows), &data, |b, d| {
            b.iter(|| black_box(nearest_neighbors(d).unwrap()))
        });
    }
    g.finish();
}

fn flow_training(c: &mut Criterion) {
    let data = surrogate(2, 10_000);
    let config = EstimatorConfig::Flow(quick_flow(50));
    let mut g = c.benchmark_group("flow_training");
    g.sample_size(10);
    g.bench_function("50_steps_batch_256", |b| b.iter(|| black_box(fit_estimator(&data, &config).unwrap())));
    g.finish();
}

criterion_group!(benches, step2a, calibration, kdtree, flow_training);
criterion_main!(benches);
