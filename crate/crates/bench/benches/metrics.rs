use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use oracle_core::ingest::{synth_generate, SynthProfile};
use oracle_core::metrics::{distinct_n, knn_analysis, sam_distance, wasserstein};
use oracle_core::WdMode;

fn sam(c: &mut Criterion) {
    let days = synth_generate(2, 11, SynthProfile::Mixed);
    c.bench_function("sam_distance/288", |b| b.iter(|| sam_distance(black_box(&days[0]), black_box(&days[1]))));
}

fn corpus(c: &mut Criterion) {
    let train = synth_generate(410, 1, SynthProfile::Mixed);
    let generated = synth_generate(100, 2, SynthProfile::Mixed);
    let mut g = c.benchmark_group("corpus");
    g.sample_size(20);
    g.bench_function("knn/100x410", |b| b.iter(|| knn_analysis(black_box(&generated), &train, 5).unwrap()));
    g.bench_function("wasserstein/100x410", |b| {
        b.iter(|| wasserstein(black_box(&generated), &train, WdMode::ClassDuration).unwrap())
    });
    g.bench_function("distinct_15/410", |b| b.iter(|| distinct_n(black_box(&train), 15)));
    g.finish();
}

criterion_group!(benches, sam, corpus);
criterion_main!(benches);
