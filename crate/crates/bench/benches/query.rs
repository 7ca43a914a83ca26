use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mgeal_bench::{archive, fitted};
use mgeal_core::rng::stream;
use mgeal_core::{cluster, model, query, ssl, ByolConfig, Sample, TrainConfig};
use rand::Rng;

fn bench_scores(c: &mut Criterion) {
    let data = archive(1500);
    let params = fitted(&data, 60);
    let pool: Vec<&Sample> = data.samples().iter().collect();
    c.bench_function("mge_scores/1500", |b| {
        b.iter(|| query::mge_scores(black_box(&params), &pool).unwrap())
    });
}

fn bench_queries(c: &mut Criterion) {
    let data = archive(1500);
    let params = fitted(&data, 60);
    let pool: Vec<&Sample> = data.samples().iter().collect();
    let mut group = c.benchmark_group("query");
    for b in [10, 20] {
        group.bench_with_input(BenchmarkId::new("mge", b), &b, |bench, &b| {
            bench.iter(|| query::mge_query(&params, &pool, b).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mge_clustering", b), &b, |bench, &b| {
            let mut rng = stream(0, 3);
            bench.iter(|| query::mge_clustering_query(&params, &pool, b, 10 * b, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn bench_kmeans(c: &mut Criterion) {
    let mut rng = stream(1, 0);
    let points: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..32).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut group = c.benchmark_group("kmeans_200x32");
    group.bench_function("single", |b| {
        let mut rng = stream(2, 0);
        b.iter(|| {
            cluster::cluster(
                &points,
                20,
                &mut rng,
                cluster::DEFAULT_MAX_ITER,
                cluster::DEFAULT_TOL,
            )
            .unwrap()
        })
    });
    group.bench_function("best_of", |b| {
        let mut rng = stream(2, 0);
        b.iter(|| {
            cluster::cluster_best_of(
                &points,
                20,
                &mut rng,
                cluster::DEFAULT_RESTARTS,
                cluster::DEFAULT_MAX_ITER,
                cluster::DEFAULT_TOL,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let data = archive(800);
    let params = mgeal_core::ModelParams::init(data.dim(), &[32], data.num_classes(), 0).unwrap();
    let labeled: Vec<&Sample> = data.samples().iter().take(200).collect();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("train_200x100ep", |b| {
        b.iter(|| model::train(&params, &labeled, &TrainConfig::default()).unwrap())
    });
    let byol = ByolConfig {
        epochs: 1,
        ..ByolConfig::default()
    };
    group.bench_function("byol_epoch_800", |b| {
        b.iter(|| ssl::pretrain(&data, &byol).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_scores,
    bench_queries,
    bench_kmeans,
    bench_training
);
criterion_main!(benches);
