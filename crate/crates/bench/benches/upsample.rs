use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use embshift::interp::{upsample1d, upsample2d, Method, UpsampleSpec};
use embshift_bench::{noise_1d, noise_2d};

fn bench_upsample1d(c: &mut Criterion) {
    let input = noise_1d(4096);
    let mut group = c.benchmark_group("upsample1d_4096_to_8192");
    for method in Method::ALL {
        let spec = UpsampleSpec::one_d(method, 8192);
        group.bench_function(method.to_string(), |b| {
            b.iter(|| upsample1d(black_box(&input), &spec).unwrap())
        });
    }
    group.finish();
}

fn bench_upsample2d(c: &mut Criterion) {
    let input = noise_2d(64);
    let mut group = c.benchmark_group("upsample2d_64_to_128");
    for method in Method::ALL {
        let spec = UpsampleSpec::two_d(method, 128, 128);
        group.bench_function(method.to_string(), |b| {
            b.iter(|| upsample2d(black_box(&input), &spec).unwrap())
        });
    }
    group.finish();
}

fn bench_stats(c: &mut Criterion) {
    let input = noise_1d(1 << 20);
    c.bench_function("stats_1M", |b| b.iter(|| black_box(&input).stats()));
}

criterion_group!(benches, bench_upsample1d, bench_upsample2d, bench_stats);
criterion_main!(benches);
