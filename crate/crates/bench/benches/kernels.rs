use adbn_bench::{random_images, random_model};
use adbn_core::detection::{detect, iou, voronoi_partition, BoundingBox, DetectConfig};
use adbn_core::{RbmLayer, Rng};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn rbm(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let layer = RbmLayer::new(1024, 400, &mut rng).unwrap();
    let batch = random_images(100, 1024, 2);
    c.bench_function("cd1_step_1024x400_batch100", |b| {
        let mut rng = Rng::new(3);
        b.iter(|| layer.cd_step(black_box(&batch), 1, &mut rng).unwrap())
    });
}

fn inference(c: &mut Criterion) {
    let model = random_model((32, 32), &[400, 200], 9, 4);
    let images = random_images(100, 1024, 5);
    c.bench_function("predict_proba_batch_100", |b| {
        b.iter(|| model.predict_proba_batch(black_box(&images)).unwrap())
    });
}

fn geometry(c: &mut Criterion) {
    let mut rng = Rng::new(6);
    let seeds: Vec<(usize, usize)> = (0..16).map(|_| (rng.below(64), rng.below(64))).collect();
    c.bench_function("voronoi_64x64_16_seeds", |b| {
        b.iter(|| voronoi_partition(64, 64, black_box(&seeds)).unwrap())
    });
    let a = BoundingBox::new(3, 4, 20, 15);
    let bx = BoundingBox::new(10, 8, 18, 22);
    c.bench_function("iou", |b| b.iter(|| iou(black_box(&a), black_box(&bx))));
}

fn detection(c: &mut Criterion) {
    let model = random_model((32, 32), &[100], 9, 7);
    let image = random_images(1, 1024, 8).pop().unwrap();
    let cfg = DetectConfig {
        t1: 0.01,
        t2: 0.02,
        background: None,
        ..DetectConfig::default()
    };
    c.bench_function("detect_32x32_16_regions", |b| {
        b.iter(|| detect(&model, black_box(&image), 32, 32, &cfg, &mut Rng::new(9)).unwrap())
    });
}

criterion_group!(benches, rbm, inference, geometry, detection);
criterion_main!(benches);
