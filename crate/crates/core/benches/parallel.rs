//! Compares the data-parallel fit against single-worker execution.
//!
//! Build with the default `parallel` feature to measure the rayon path; a
//! `--no-default-features` build runs the same benchmark names on the
//! sequential fallback so the two reports line up group by group.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use hpanel_core::dgp::{simulate, DgpConfig};
use hpanel_core::estimator::{fit, step1_beta, FitOptions};
use hpanel_core::fixtures::representation_from_truth;
use hpanel_core::inference::{bootstrap_beta, BootstrapOptions};
use hpanel_core::model::FactorCounts;

#[cfg(feature = "parallel")]
fn with_workers<R>(workers: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_workers<R>(_workers: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    f()
}

fn bench_step1(c: &mut Criterion) {
    let config = DgpConfig::paper_design(12, 12, 60, 7);
    let (data, truth) = simulate(&config).expect("simulate");
    let rep = representation_from_truth(&data, &truth).expect("representation");
    let mut group = c.benchmark_group("step1");
    group.sample_size(20);
    for workers in [1usize, 2, 4] {
        group.bench_function(format!("workers_{workers}"), |b| {
            b.iter(|| with_workers(workers, || black_box(step1_beta(&data, &rep).expect("step1"))));
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let config = DgpConfig::paper_design(10, 10, 60, 11);
    let (data, _) = simulate(&config).expect("simulate");
    let counts = FactorCounts::uniform(10, 10, 2, 1, 1);
    let options = FitOptions {
        max_iter: 5,
        ..FitOptions::default()
    };
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for workers in [1usize, 2, 4] {
        group.bench_function(format!("workers_{workers}"), |b| {
            b.iter(|| with_workers(workers, || black_box(fit(&data, &counts, &options).expect("fit"))));
        });
    }
    group.finish();
}

fn bench_bootstrap(c: &mut Criterion) {
    let config = DgpConfig::paper_design(8, 8, 60, 13);
    let (data, _) = simulate(&config).expect("simulate");
    let counts = FactorCounts::uniform(8, 8, 2, 1, 1);
    let fitted = fit(&data, &counts, &FitOptions::default()).expect("fit");
    let options = BootstrapOptions {
        replications: 99,
        ..BootstrapOptions::default()
    };
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for workers in [1usize, 2, 4] {
        group.bench_function(format!("workers_{workers}"), |b| {
            b.iter(|| with_workers(workers, || black_box(bootstrap_beta(&data, &fitted, &options).expect("bootstrap"))));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_step1, bench_fit, bench_bootstrap);
criterion_main!(benches);
