use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsedit_core::fixtures::{fixture, FixtureName};
use gsedit_core::losses::{combine_sds, compose_pseudo_gt, mse_grad};
use gsedit_core::pipeline::EditConfig;
use gsedit_core::render::{render, render_backward};
use gsedit_core::{Intrinsics, Mask, RenderSettings, RgbImage};

fn setup(size: usize) -> (gsedit_core::GaussianScene, gsedit_core::CameraPose, Intrinsics) {
    let f = fixture(FixtureName::BoxScene100, 0);
    let cfg = EditConfig {
        width: size,
        height: size,
        ..f.edit_config(0)
    };
    let pose = cfg.refinement_grid().unwrap()[5];
    (f.scene, pose, cfg.intrinsics().unwrap())
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_forward");
    for size in [64, 256] {
        let (scene, pose, k) = setup(size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| render(black_box(&scene), None, &pose, &k, [0.0; 3], &RenderSettings::default()).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_backward");
    for size in [64, 256] {
        let (scene, pose, k) = setup(size);
        let settings = RenderSettings::default();
        let target = RgbImage::filled(size, size, [0.5; 3]);
        let out = render(&scene, None, &pose, &k, [0.0; 3], &settings).unwrap();
        let grad = mse_grad(&out.rgb, &target).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| render_backward(black_box(&scene), None, &pose, &k, [0.0; 3], &grad, &settings).unwrap())
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let n = 512;
    let a = RgbImage::filled(n, n, [0.2, 0.4, 0.6]);
    let b = RgbImage::filled(n, n, [0.7, 0.1, 0.3]);
    let mask = Mask {
        width: n,
        height: n,
        data: (0..n * n).map(|i| i % 3 == 0).collect(),
    };
    c.bench_function("combine_sds_512", |bench| bench.iter(|| combine_sds(black_box(&a), &b, 0.5).unwrap()));
    c.bench_function("compose_pseudo_gt_512", |bench| {
        bench.iter(|| compose_pseudo_gt(black_box(&a), &b, &mask).unwrap())
    });
}

criterion_group!(benches, forward, backward, losses);
criterion_main!(benches);
