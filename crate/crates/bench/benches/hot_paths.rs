use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedtracker::fingerprint::{generate_codes, linsert, FingerprintConfig, GaParams};
use fedtracker::nn::Mode;
use fedtracker::watermark::project_gradient;
use fedtracker_bench::{batch, default_model, records};

fn forward_backward(c: &mut Criterion) {
    let (x, y) = batch(32, 1);
    let mut model = default_model(0);
    model.set_mode(Mode::Train);
    c.bench_function("forward_backward_batch32", |b| {
        b.iter(|| black_box(model.loss_and_grad(&x, &y).unwrap()))
    });
    model.set_mode(Mode::Eval);
    let (test, _) = batch(200, 2);
    c.bench_function("predict_200", |b| b.iter(|| black_box(model.predict(&test).unwrap())));
}

fn fingerprint_insertion(c: &mut Criterion) {
    let model = default_model(3);
    let recs = records(10, 128, 4);
    let cfg = FingerprintConfig::default();
    c.bench_function("linsert_default", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| black_box(linsert(&mut m, &recs[0], &cfg).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn code_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("ga");
    group.sample_size(10);
    group.bench_function("k10_n128_default", |b| {
        b.iter(|| black_box(generate_codes(10, 128, &GaParams::default()).unwrap()))
    });
    group.finish();
}

fn projection(c: &mut Criterion) {
    let (x, y) = batch(32, 5);
    let model = default_model(6);
    let (_, g) = model.loss_and_grad(&x, &y).unwrap();
    let (_, m) = default_model(7).loss_and_grad(&x, &y).unwrap();
    c.bench_function("project_gradient_full_model", |b| {
        b.iter(|| black_box(project_gradient(&g, &m).unwrap()))
    });
}

criterion_group!(benches, forward_backward, fingerprint_insertion, code_search, projection);
criterion_main!(benches);
