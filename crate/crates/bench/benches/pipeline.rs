use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ris_sensing::estimation::{als_stage1, als_stage2, tensorize_f};
use ris_sensing::{add_noise_at_snr, run_pipeline, EstimatorSettings, Scenario, ScenarioConfig};

fn stages(c: &mut Criterion) {
    let cfg = ScenarioConfig::desk();
    let settings = EstimatorSettings::default();
    let sc = Scenario::draw(&cfg, 1).unwrap();
    let noisy = add_noise_at_snr(&sc.clean, 20.0, 2).unwrap().noisy;

    let mut group = c.benchmark_group("stages");
    group.sample_size(20);
    group.bench_function("stage1/noiseless", |b| {
        b.iter(|| als_stage1(black_box(&sc.clean), &sc.codebook, &settings.stage1).unwrap())
    });
    group.bench_function("stage1/20dB", |b| {
        b.iter(|| als_stage1(black_box(&noisy), &sc.codebook, &settings.stage1).unwrap())
    });
    let s1 = als_stage1(&noisy, &sc.codebook, &settings.stage1).unwrap();
    let ft = tensorize_f(&s1.f_hat, cfg.m, cfg.q).unwrap();
    group.bench_function("stage2/20dB", |b| {
        b.iter(|| als_stage2(black_box(&ft), &sc.pilots, &settings.stage2).unwrap())
    });
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let settings = EstimatorSettings::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for q in [8, 16, 32] {
        let cfg = ScenarioConfig {
            q,
            ..ScenarioConfig::desk()
        };
        let sc = Scenario::draw(&cfg, 3).unwrap();
        let noisy = add_noise_at_snr(&sc.clean, 20.0, 4).unwrap().noisy;
        group.bench_with_input(BenchmarkId::new("desk_20dB_Q", q), &noisy, |b, y| {
            b.iter(|| run_pipeline(black_box(y), &sc, &settings).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stages, end_to_end);
criterion_main!(benches);
