use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pguide_bench::fixture;
use pguide_core::gradcheck::probe_tensor;
use pguide_core::{sample, sample_unconditional, GuidedSampler, NoisePredictor, SamplerConfig};

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    for points in [2, 16, 64] {
        let f = fixture(points, 16, 1000);
        let x = probe_tensor(f.shape, 99);
        group.bench_with_input(BenchmarkId::from_parameter(points), &points, |b, _| {
            b.iter(|| f.prior.predict(black_box(&x), 500).unwrap())
        });
    }
    group.finish();
}

fn guided_step(c: &mut Criterion) {
    let f = fixture(2, 16, 200);
    let x = probe_tensor(f.shape, 7);
    let mut group = c.benchmark_group("guided_step");
    for (label, cfg) in [
        ("single", SamplerConfig::new(200, 0.01, true, 0)),
        ("n3", SamplerConfig::new(200, 0.01, true, 0).with_multi_step(3, 1, 200)),
    ] {
        let sampler = GuidedSampler::new(&f.schedule, &f.prior, &cfg).unwrap();
        let mut guidance = f.guidance();
        group.bench_function(label, |b| {
            b.iter(|| sampler.step(&mut guidance, black_box(x.clone()), 100, None).unwrap())
        });
    }
    group.finish();
}

fn full_sample(c: &mut Criterion) {
    let f = fixture(2, 8, 200);
    let mut group = c.benchmark_group("sample_t200_3x8x8");
    group.sample_size(20);
    group.bench_function("unconditional", |b| {
        b.iter(|| sample_unconditional(&f.schedule, &f.prior, black_box(1), f.shape).unwrap())
    });
    let cfg = SamplerConfig::new(200, 0.01, true, 1);
    group.bench_function("inpaint_dynamic", |b| {
        b.iter(|| sample(&f.schedule, &f.prior, &mut f.guidance(), black_box(&cfg), f.shape).unwrap())
    });
    group.finish();
}

criterion_group!(benches, predict, guided_step, full_sample);
criterion_main!(benches);
