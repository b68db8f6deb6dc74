use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use owsc_bench::objects;
use owsc_core::annindex::{
    all_nn_within_category_with, build_ivf, AllNnSearch, DEFAULT_KMEANS_ITERS,
};
use owsc_core::curriculum::{
    partitions_for_epoch, partners_s1, partners_s2, partners_s3, CurriculumConfig,
};
use owsc_core::rng::seeded;

const GRID: [usize; 3] = [100, 400, 1600];

fn partners(c: &mut Criterion) {
    let config = CurriculumConfig::default();
    let mut group = c.benchmark_group("partners");
    group.sample_size(10);
    for n in GRID {
        let objs = objects(n, 0);
        let total = objs.manifest.len();
        group.throughput(Throughput::Elements(total as u64));
        let mut rng = seeded(1);
        group.bench_with_input(BenchmarkId::new("s1", n), &objs, |b, o| {
            b.iter(|| partners_s1(&o.manifest, &mut rng).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("s2", n), &objs, |b, o| {
            b.iter(|| {
                partners_s2(
                    &o.manifest,
                    &o.aggregates,
                    config.top_k,
                    config.neighbor_search,
                    &mut rng,
                )
                .unwrap()
            })
        });
        let cells = partitions_for_epoch(50, &config, total);
        group.bench_with_input(BenchmarkId::new("s3", n), &objs, |b, o| {
            b.iter(|| {
                partners_s3(
                    &o.manifest,
                    &o.aggregates,
                    cells,
                    config.kmeans_iters,
                    &mut rng,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn neighbours(c: &mut Criterion) {
    let mut group = c.benchmark_group("all_nn");
    group.sample_size(10);
    let objs = objects(400, 0);
    for (name, search) in [
        ("exact", AllNnSearch::Exact),
        ("auto", AllNnSearch::default()),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                all_nn_within_category_with(&objs.aggregates, &objs.manifest, 5, search).unwrap()
            })
        });
    }
    group.bench_function("build_ivf_k100", |b| {
        b.iter(|| build_ivf(black_box(&objs.aggregates), 100, DEFAULT_KMEANS_ITERS, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, partners, neighbours);
criterion_main!(benches);
