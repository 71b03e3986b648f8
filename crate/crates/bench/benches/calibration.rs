use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use venncal_core::calibration::{pava, VennAbersCalibrator};
use venncal_core::data::FeatureMatrix;
use venncal_core::models::{fit_forest, fit_tree, ForestParams, TreeParams};

fn scores(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: f64 = rng.random();
            (s, u8::from(rng.random::<f64>() < s))
        })
        .unzip()
}

fn table(n: usize, seed: u64) -> (FeatureMatrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = FeatureMatrix::with_columns(6);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..100.0)).collect();
        let risk = (row[0] + row[1] - 100.0) / 20.0;
        y.push(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-risk).exp())));
        x.push_row(&row).unwrap();
    }
    (x, y)
}

fn isotonic(c: &mut Criterion) {
    let mut group = c.benchmark_group("pava");
    for n in [1_000, 10_000, 100_000] {
        let (s, y) = scores(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| pava(black_box(&s), black_box(&y)).unwrap())
        });
    }
    group.finish();
}

fn venn_abers(c: &mut Criterion) {
    let mut group = c.benchmark_group("venn_abers_interval");
    for n in [1_000, 10_000] {
        let (s, y) = scores(n, 2);
        let cal = VennAbersCalibrator::new(s, y).unwrap();
        let (tests, _) = scores(100, 3);
        group.bench_with_input(BenchmarkId::new("fast", n), &n, |b, _| {
            b.iter(|| {
                for &t in &tests {
                    black_box(cal.interval(t).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("refit", n), &n, |b, _| {
            b.iter(|| {
                for &t in &tests {
                    black_box(cal.interval_by_refit(t).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn models(c: &mut Criterion) {
    let (x, y) = table(6_000, 4);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("tree", |b| {
        b.iter(|| fit_tree(black_box(&x), black_box(&y), TreeParams::default(), 0).unwrap())
    });
    group.bench_function("forest_100", |b| {
        b.iter(|| fit_forest(black_box(&x), black_box(&y), ForestParams::default(), 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, isotonic, venn_abers, models);
criterion_main!(benches);
