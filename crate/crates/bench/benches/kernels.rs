use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use permadyn_bench::{line_kernel, random_matrix};
use permadyn_core::alpha_permanent::{per_alpha, per_alpha_subset, permanent_ryser};
use permadyn_core::dynamics::{simulate, DynamicsKind, HopKernel, HopShape, HopTable, RateModel, SimulationLimits};
use permadyn_core::gaussian_field::factorize;
use permadyn_core::papangelou::{Intensity, RatioIntensity};
use permadyn_core::rng::Stream;
use permadyn_core::sampler::{CoxProcess, CoxWeights};

fn permanents(c: &mut Criterion) {
    let mut g = c.benchmark_group("alpha_permanent");
    for n in [6, 8] {
        let a = random_matrix(n, 1).unwrap();
        g.bench_with_input(BenchmarkId::new("heap", n), &a, |b, a| {
            b.iter(|| per_alpha(black_box(a), 0.5))
        });
    }
    for n in [8, 12, 16] {
        let a = random_matrix(n, 2).unwrap();
        g.bench_with_input(BenchmarkId::new("subset", n), &a, |b, a| {
            b.iter(|| per_alpha_subset(black_box(a), 0.5))
        });
        g.bench_with_input(BenchmarkId::new("ryser", n), &a, |b, a| {
            b.iter(|| permanent_ryser(black_box(a)))
        });
    }
    g.finish();
}

fn fields(c: &mut Criterion) {
    let mut g = c.benchmark_group("gaussian_field");
    for m in [64, 256, 1024] {
        let k = line_kernel(m, 1.0, 0.3).unwrap();
        g.bench_with_input(BenchmarkId::new("factorize", m), &k, |b, k| {
            b.iter(|| factorize(black_box(k)))
        });
    }
    let k = line_kernel(256, 1.0, 0.3).unwrap();
    let p = CoxProcess::new(k, 2).unwrap();
    let s = Stream::new(3);
    let mut i = 0;
    g.bench_function("sample_cox_256", |b| {
        b.iter(|| {
            i += 1;
            p.sample(&s, i, false)
        })
    });
    g.finish();
}

fn dynamics(c: &mut Criterion) {
    let k = line_kernel(8, 1.2, 0.15).unwrap();
    let grid = k.grid().clone();
    let mut w = CoxWeights::from_kernel(&k, 1).unwrap();
    w.validate(&Stream::new(4)).unwrap();
    let r = RatioIntensity::new(&w).unwrap();
    let hop = HopKernel::new(HopShape::Box, 0.5, 1.0).unwrap();
    let model = RateModel::new(0.5, hop, RateModel::clamp_for(1, k.max_diagonal())).unwrap();
    let table = HopTable::new(&grid, &hop);
    let start = CoxProcess::new(k, 1)
        .unwrap()
        .sample(&Stream::new(5), 0, false)
        .configuration;
    let limits = SimulationLimits {
        horizon: 5.0,
        max_events: 100_000,
    };
    let mut g = c.benchmark_group("dynamics");
    g.bench_function("papangelou_all_cells", |b| {
        b.iter_batched(
            || r.clone(),
            |mut r| r.all(black_box(&start)),
            criterion::BatchSize::SmallInput,
        )
    });
    for kind in [DynamicsKind::Glauber, DynamicsKind::Kawasaki] {
        let mut seed = 0;
        g.bench_function(format!("{kind:?}_horizon_5"), |b| {
            b.iter(|| {
                seed += 1;
                let mut r = r.clone();
                simulate(
                    kind,
                    &start,
                    &grid,
                    &model,
                    &table,
                    &mut r,
                    limits,
                    &mut Stream::new(seed).rng(),
                )
            })
        });
    }
    g.finish();
}

criterion_group!(benches, permanents, fields, dynamics);
criterion_main!(benches);
