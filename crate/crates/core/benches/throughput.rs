//! Trial throughput: the sequential driver (jobs = 1) against the rayon
//! pool (jobs = 0, all cores). Without the `parallel` feature only the
//! sequential path exists and both runs measure it.

use chernoff_net::harness::{run_monte_carlo, ExperimentConfig, Protocol};
use criterion::{criterion_group, criterion_main, Criterion};

fn block(
    protocol: Protocol,
    sensors: usize,
    cost: f64,
    trials: u64,
    jobs: usize,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(protocol, 3, sensors, cost);
    cfg.trials = trials;
    cfg.seed = 71;
    cfg.jobs = jobs;
    cfg
}

fn bench_dct(c: &mut Criterion) {
    let mut group = c.benchmark_group("dct_10k_trials");
    let seq = block(Protocol::Dct, 5, 0.01, 10_000, 1);
    group.bench_function("sequential", |b| {
        b.iter(|| run_monte_carlo(&seq).unwrap().stats.mean_n)
    });
    let par = block(Protocol::Dct, 5, 0.01, 10_000, 0);
    group.bench_function("parallel", |b| {
        b.iter(|| run_monte_carlo(&par).unwrap().stats.mean_n)
    });
    group.finish();
}

fn bench_cct(c: &mut Criterion) {
    let mut group = c.benchmark_group("cct_500_trials");
    let seq = block(Protocol::Cct, 10, 0.01, 500, 1);
    group.bench_function("sequential", |b| {
        b.iter(|| run_monte_carlo(&seq).unwrap().stats.mean_n)
    });
    let par = block(Protocol::Cct, 10, 0.01, 500, 0);
    group.bench_function("parallel", |b| {
        b.iter(|| run_monte_carlo(&par).unwrap().stats.mean_n)
    });
    group.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_dct, bench_cct
);
criterion_main!(benches);
