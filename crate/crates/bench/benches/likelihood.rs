use criterion::{criterion_group, criterion_main, Criterion};
use epikal::gaussian_approx::build_system;
use epikal::inference::{fit, FitOptions, Parameterization};
use epikal::kalman::log_likelihood;
use epikal::SystemOptions;
use epikal_bench::simulated_series;

fn likelihood(c: &mut Criterion) {
    let (model, theta, series) = simulated_series(10_000, 100, 7);
    let opts = SystemOptions::default();
    let build = || build_system(&model, &theta, &series.observed, &series.times, series.n_pop, &opts).unwrap();
    c.bench_function("build_system n=100", |b| b.iter(build));
    let sys = build();
    c.bench_function("kalman loglik n=100", |b| b.iter(|| log_likelihood(&sys, &series).loglik));
}

fn fitting(c: &mut Criterion) {
    let (model, theta, series) = simulated_series(10_000, 100, 7);
    let param = Parameterization::new(&model, &[1], &theta, &["lambda", "gamma", "i0", "p"]).unwrap();
    let opts = FitOptions { n_starts: 1, ..FitOptions::default() };
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("single start n=100", |b| b.iter(|| fit(&model, &series, &param, &opts).unwrap().loglik));
    group.finish();
}

criterion_group!(benches, likelihood, fitting);
criterion_main!(benches);
