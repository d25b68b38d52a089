//! Compares the rayon-backed sweep path against the plain sequential loop on
//! the two workloads that dominate batch experiments: bandit regret sweeps
//! over seeds and trade-off matrix rows.
//!
//! Run with the default features for the parallel path; with
//! `--no-default-features` both benches collapse to the sequential loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cas_core::analysis::{tradeoff_matrix, MatrixMode};
use cas_core::bandit::run_ucb;
use cas_core::env::{generate_clean_risk, generate_risks, generate_theta, EnvState};
use cas_core::parallel::{par_map_range, seq_map_range};
use cas_core::rng::substream;

fn regret_sweep(seeds: usize, horizon: usize, parallel: bool) -> f64 {
    let run = |seed: usize| {
        let mut rng = substream(seed as u64, "bench-regret");
        run_ucb(&[0.9, 0.1], horizon, &mut rng).unwrap().pseudo_regret()
    };
    let regrets = if parallel { par_map_range(seeds, run) } else { seq_map_range(seeds, run) };
    regrets.iter().sum::<f64>() / seeds as f64
}

fn bench_regret_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("regret_sweep_30_seeds");
    for &(label, parallel) in &[("sequential", false), ("parallel", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &p| {
            b.iter(|| regret_sweep(30, 2_000, p));
        });
    }
    group.finish();
}

fn bench_tradeoff_rows(c: &mut Criterion) {
    let dim = 12;
    let arms = 12;
    let risks = generate_risks(arms, dim, 1.0, 77);
    let clean = generate_clean_risk(dim, 77);
    let env = EnvState::new(generate_theta(dim, 77), 0.05, 0.0).unwrap();

    let mut group = c.benchmark_group("tradeoff_matrix_rows");
    // ResetPerRow rows fan out through the parallel module; Cumulative is the
    // inherently sequential ordering, benchmarked as the baseline shape.
    group.bench_function("sequential_rows", |b| {
        b.iter(|| {
            tradeoff_matrix(&env, &risks, &clean, 1.0, 150, MatrixMode::Cumulative).unwrap()
        });
    });
    group.bench_function("reset_rows", |b| {
        b.iter(|| {
            tradeoff_matrix(&env, &risks, &clean, 1.0, 150, MatrixMode::ResetPerRow).unwrap()
        });
    });
    group.finish();
}

criterion_group!(benches, bench_regret_sweep, bench_tradeoff_rows);
criterion_main!(benches);
