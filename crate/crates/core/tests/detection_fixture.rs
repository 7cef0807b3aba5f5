//! A small classifier trained on synthetic shapes must localise a shape in a
//! held-out image.

use std::collections::HashMap;

use adbn_core::dataset::{synth_generate, SynthConfig};
use adbn_core::dbn::{finetune, pretrain, TrainConfig};
use adbn_core::detection::{detect, evaluate_detection, iou, BoundingBox, DetectConfig};
use adbn_core::{GrowthTrace, Rng};

#[test]
fn trained_model_finds_held_out_shapes() {
    let (images, boxes) = synth_generate(1170, &SynthConfig::default(), &mut Rng::new(42)).unwrap();
    let (train, test) = images.split_at(1080);
    let inputs: Vec<&[f64]> = train.iter().map(|i| i.image.pixels.as_slice()).collect();
    let labels: Vec<usize> = train.iter().map(|i| i.class_id).collect();
    let mut cfg = TrainConfig {
        learning_rate: 0.05,
        finetune_learning_rate: 0.1,
        batch_size: 20,
        epochs_per_layer: 10,
        finetune_epochs: 60,
        initial_hidden: 80,
        seed: 42,
        ..TrainConfig::default()
    };
    cfg.adaptive.max_layers = 1;
    let mut model = pretrain(&inputs, (32, 32), 9, &cfg, &mut GrowthTrace::default()).unwrap();
    finetune(&mut model, &inputs, &labels, &cfg).unwrap();

    let dcfg = DetectConfig {
        t1: 0.5,
        t2: 0.7,
        ..DetectConfig::default()
    };
    let mut found: HashMap<String, Vec<BoundingBox>> = HashMap::new();
    let mut rng = Rng::new(42);
    for img in test.iter().filter(|i| i.class_id != 0) {
        let b = detect(&model, &img.image.pixels, 32, 32, &dcfg, &mut rng).unwrap();
        assert!(b
            .iter()
            .all(|b| b.class_id != 0 && b.score > 0.7 && b.w > 0 && b.h > 0));
        found.insert(img.name.clone(), b);
    }
    let truth: Vec<_> = boxes
        .iter()
        .filter(|b| found.contains_key(&b.image))
        .cloned()
        .collect();

    // first held-out shape: at least one box of its class overlaps it by half
    let first = &truth[0];
    let gt = BoundingBox::from(first);
    assert!(found[&first.image]
        .iter()
        .any(|b| b.class_id == first.class_id && iou(b, &gt) >= 0.5));

    let eval = evaluate_detection(&found, &truth, 0.5, 9).unwrap();
    assert!(eval.overall().unwrap() >= 0.6, "{eval:?}");

    // an empty image is background everywhere
    let blank = vec![0.0; 32 * 32];
    let strict = DetectConfig {
        t1: 0.99,
        t2: 0.999,
        ..DetectConfig::default()
    };
    assert!(detect(&model, &blank, 32, 32, &strict, &mut Rng::new(1))
        .unwrap()
        .is_empty());
}
