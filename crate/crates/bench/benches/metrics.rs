use criterion::{criterion_group, criterion_main, Criterion};
use glnet_bench::{map_pairs, rng};
use glnet_core::metrics::{e_measure, evaluate, max_f_measure, s_measure, MetricConfig};
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let pairs = map_pairs(&mut rng(2), 10, 160);
    let cfg = MetricConfig::default();
    c.bench_function("max F 10x160x160", |b| b.iter(|| max_f_measure(black_box(&pairs), &cfg).unwrap()));
    c.bench_function("S 10x160x160", |b| b.iter(|| s_measure(black_box(&pairs), &cfg).unwrap()));
    c.bench_function("max E 10x160x160", |b| b.iter(|| e_measure(black_box(&pairs), &cfg).unwrap()));
    c.bench_function("evaluate 10x160x160", |b| b.iter(|| evaluate(black_box(&pairs), &cfg).unwrap()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
