use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use embshift::augment::{
    cutmix, mixup, random_erase, sample_cutmix_mask, EraseMode, DEFAULT_ERASE_AREA_RANGE,
    DEFAULT_ERASE_ASPECT_RANGE,
};
use embshift::interp::{Dims, Method};
use embshift::tensor::SeededRng;
use embshift::varcal::measure_k;
use embshift::vitfront::{ln_grad_wrt_p, LN_EPS};
use embshift_bench::{noise_1d, noise_image};

fn bench_mix_ops(c: &mut Criterion) {
    let a = noise_image(224);
    let b = embshift::tensor::randn(vec![224, 224, 3], &SeededRng::new(3)).unwrap();
    c.bench_function("mixup_224", |bencher| {
        bencher.iter(|| mixup(black_box(&a), black_box(&b), 0.8).unwrap())
    });
    let mask = sample_cutmix_mask((224, 224), 0.5, &SeededRng::new(4)).unwrap();
    c.bench_function("cutmix_224", |bencher| {
        bencher.iter(|| cutmix(black_box(&a), black_box(&b), &mask).unwrap())
    });
    c.bench_function("random_erase_pixel_224", |bencher| {
        bencher.iter(|| {
            random_erase(
                black_box(&a),
                EraseMode::Pixel,
                1.0,
                DEFAULT_ERASE_AREA_RANGE,
                DEFAULT_ERASE_ASPECT_RANGE,
                &SeededRng::new(5),
            )
            .unwrap()
        })
    });
}

fn bench_measure_k(c: &mut Criterion) {
    c.bench_function("measure_k_bilinear_1d_100_trials", |bencher| {
        bencher.iter(|| {
            measure_k(
                Method::Bilinear,
                Dims::OneD,
                2.0,
                4096,
                100,
                &SeededRng::new(6),
            )
            .unwrap()
        })
    });
}

fn bench_ln_jacobian(c: &mut Criterion) {
    let x = noise_1d(64);
    let p = embshift::tensor::randn(vec![64], &SeededRng::new(7))
        .unwrap()
        .scale(0.02);
    c.bench_function("ln_jacobian_64", |bencher| {
        bencher.iter(|| ln_grad_wrt_p(black_box(&x), black_box(&p), LN_EPS).unwrap())
    });
}

criterion_group!(benches, bench_mix_ops, bench_measure_k, bench_ln_jacobian);
criterion_main!(benches);
