use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slicekit::certify::{case3_length_cap, search_case3_grid, GammaGrid};
use slicekit::matrix::Params;
use slicekit::products::{generate_sequence, ProductSettings};
use slicekit::slice::{run_sequence, Mode};
use slicekit::{par_map, Execution};

fn slice_ensemble(exec: Execution, seeds: &[u64]) -> usize {
    let params = Params::new(0.1, 0.6, 0.05).unwrap();
    let settings = ProductSettings {
        n: 6,
        ..ProductSettings::default()
    };
    par_map(exec, seeds, |&s| {
        let seq = generate_sequence(&settings, &params, s, 400).unwrap();
        run_sequence(&seq, &params, Mode::Strict)
            .unwrap()
            .slices
            .len()
    })
    .into_iter()
    .sum()
}

fn bench_slices(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..256).collect();
    let mut group = c.benchmark_group("slice_ensemble");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| b.iter(|| slice_ensemble(exec, black_box(&seeds))),
        );
    }
    group.finish();
}

fn bench_grid(c: &mut Criterion) {
    let params = Params::new(0.05, 0.3, 0.1).unwrap();
    // caps of a grid point late in grid order, so most points are tried
    let lengths: Vec<usize> = (1..=2000)
        .map(|i| case3_length_cap(i, 1.0, 1.0, &params).unwrap().floor() as usize)
        .collect();
    let grid = GammaGrid::default();
    let mut group = c.benchmark_group("case3_grid");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| {
                b.iter(|| search_case3_grid(black_box(&lengths), &grid, &params, exec).unwrap())
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_slices, bench_grid);
criterion_main!(benches);
