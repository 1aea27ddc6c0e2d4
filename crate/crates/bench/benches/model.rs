use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use oracle_core::generate::{generate, GenerationRequest};
use oracle_core::ingest::{synth_generate, SynthProfile};
use oracle_core::model::{Cvae, ModelConfig, TrainConfig, Trainer};
use oracle_core::PlausibilityRuleSet;

fn train_step(c: &mut Criterion) {
    let data = synth_generate(16, 3, SynthProfile::Mixed);
    let days: Vec<_> = data.iter().collect();
    let mut g = c.benchmark_group("desk");
    g.sample_size(10);
    for (name, contrastive) in [("train_step/plain", false), ("train_step/mined8", true)] {
        let tcfg = TrainConfig { contrastive, mining_pool: 8, ..TrainConfig::default() };
        let mut t = Trainer::new(ModelConfig::desk(), tcfg, PlausibilityRuleSet::table1()).unwrap();
        g.bench_function(name, |b| b.iter(|| t.train_step(black_box(&days)).unwrap()));
    }
    let model = Cvae::<f32>::new(ModelConfig::desk(), 1).unwrap();
    let req = GenerationRequest::random(8, 1, 1.0);
    g.bench_function("generate/8", |b| b.iter(|| generate(&model, black_box(&req)).unwrap()));
    g.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
