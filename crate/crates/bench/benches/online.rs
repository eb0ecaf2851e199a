use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ridge_identity::identity::{certify, DEFAULT_TOL};
use ridge_identity::regression::{fit_batch, run_online};
use ridge_identity::KernelSpec;
use ridge_identity_bench::uniform_sample;
use std::hint::black_box;

fn online_vs_batch(c: &mut Criterion) {
    let spec = KernelSpec::Rbf { b: 1.0 };
    let mut group = c.benchmark_group("krr");
    for t in [50usize, 200, 400] {
        let sample = uniform_sample(t as u64, 3, t);
        group.bench_with_input(BenchmarkId::new("run_online", t), &sample, |b, s| {
            b.iter(|| run_online(black_box(s), &spec, 0.5, Some(1.0)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fit_batch", t), &sample, |b, s| {
            b.iter(|| fit_batch(black_box(s), &spec, 0.5).unwrap())
        });
    }
    group.finish();
}

fn certification(c: &mut Criterion) {
    let spec = KernelSpec::Linear;
    let sample = uniform_sample(7, 5, 40);
    c.bench_function("certify_t40", |b| {
        b.iter(|| certify(black_box(&sample), &spec, 1.0, DEFAULT_TOL).unwrap())
    });
}

criterion_group!(benches, online_vs_batch, certification);
criterion_main!(benches);
