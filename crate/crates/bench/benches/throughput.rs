use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use specflow::evalkit::heldout_observations;
use specflow::policynet::init_params;
use specflow::spectral::{dct2_chunk, sim, SimKind, SimMode};
use specflow::synthdata::{gen_dataset, Task};
use specflow::{ActionChunk, Policy, TrainConfig, Trainer};

fn sampling(c: &mut Criterion) {
    let task = Task::Reach;
    let ds = gen_dataset(task, 100, 0).unwrap();
    let model = init_params(TrainConfig::new(task, "", "").model_dims(), 0).unwrap();
    let obs = heldout_observations(task, 128, 0);
    let mut group = c.benchmark_group("sample");
    group.throughput(Throughput::Elements(obs.len() as u64));
    for nfe in [1, 2, 4, 10] {
        let p = Policy::new(task, &model, ds.norm.clone(), nfe).unwrap();
        group.bench_with_input(BenchmarkId::new("nfe", nfe), &p, |b, p| {
            b.iter(|| p.sample(black_box(&obs), 1, 7).unwrap())
        });
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let chunk =
        ActionChunk::new(16, 2, (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let other =
        ActionChunk::new(16, 2, (0..32).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
    c.bench_function("dct2_chunk 16x2", |b| {
        b.iter(|| dct2_chunk(black_box(&chunk)).unwrap())
    });
    let mode = SimMode::new(SimKind::FreqAdaptive, 1);
    c.bench_function("sim freq_adaptive 16x2", |b| {
        b.iter(|| sim(black_box(&chunk), black_box(&other), mode).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let ds = gen_dataset(Task::Bimodal, 1000, 0).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for mode in [SimKind::None, SimKind::FreqAdaptive] {
        let mut cfg = TrainConfig::new(Task::Bimodal, "", "");
        cfg.mode = mode;
        let mut trainer = Trainer::new(cfg, &ds).unwrap();
        group.bench_function(mode.as_str(), |b| b.iter(|| trainer.step().unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sampling, spectral, training);
criterion_main!(benches);
