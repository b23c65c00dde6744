//! Training behaviour of the patch classifier on the shapes corpus.

use synthaug::classifier::{
    load_checkpoint, per_class_accuracy, save_checkpoint, train_on_images, PatchClassifier, TrainConfig,
};
use synthaug::data::{CategorySet, LabeledImage};
use synthaug::harness::{make_corpus, ShapesCorpusConfig};
use synthaug::seed::rng;
use synthaug::shapes::{self, Shape};

fn corpus(images: usize, seed: u64, prefix: &str) -> (CategorySet, Vec<LabeledImage>) {
    make_corpus(&ShapesCorpusConfig {
        images,
        seed,
        id_prefix: prefix.into(),
        ..Default::default()
    })
    .unwrap()
}

fn held_out_accuracy(model: &PatchClassifier, images: &[LabeledImage]) -> f64 {
    let scores: Vec<_> = images.iter().map(|i| model.predict(&i.pixels).unwrap()).collect();
    let labels: Vec<_> = images.iter().map(|i| i.labels.clone()).collect();
    per_class_accuracy(&scores, &labels, 0.5)
}

#[test]
fn attention_encoder_drives_training_loss_below_target() {
    let (cats, train) = corpus(200, 11, "train");
    let (_, test) = corpus(100, 12, "test");
    let cfg = TrainConfig {
        encoder: "attention".into(),
        ..TrainConfig::desk()
    };
    let out = train_on_images(&train, &cats, &cfg).unwrap();
    let last = *out.loss_trace.last().unwrap();
    assert_eq!(out.loss_trace.len(), 30);
    assert!(last < 0.1, "final loss {last}");
    assert!(held_out_accuracy(&out.model, &test) >= 0.95);
}

#[test]
fn linear_encoder_is_accurate_but_keeps_a_background_loss_floor() {
    let (cats, train) = corpus(200, 11, "train");
    let (_, test) = corpus(100, 12, "test");
    let out = train_on_images(&train, &cats, &TrainConfig::desk()).unwrap();
    let acc = held_out_accuracy(&out.model, &test);
    assert!(acc >= 0.95, "accuracy {acc}");
    // Background patches look alike in every image, so with a softmax over
    // foreground classes they must put noticeable mass on absent classes.
    let last = *out.loss_trace.last().unwrap();
    assert!(last > 0.15, "final loss {last}");
}

#[test]
fn overfits_a_single_image() {
    let (cats, imgs) = corpus(3, 5, "one");
    for img in &imgs {
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            ..TrainConfig::desk()
        };
        let out = train_on_images(std::slice::from_ref(img), &cats, &cfg).unwrap();
        let scores = out.model.predict(&img.pixels).unwrap();
        for (s, y) in scores.values().iter().zip(img.labels.to_targets()) {
            assert!((s - y).abs() < 0.05, "{:?} vs {:?}", scores, img.labels);
        }
    }
}

#[test]
fn fixed_seed_training_is_bit_for_bit_repeatable() {
    let (cats, train) = corpus(48, 3, "det");
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::desk()
    };
    let a = train_on_images(&train, &cats, &cfg).unwrap();
    let b = train_on_images(&train, &cats, &cfg).unwrap();
    assert_eq!(a.model.head().weight(), b.model.head().weight());
    assert_eq!(a.loss_trace, b.loss_trace);
    let other = train_on_images(&train, &cats, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model.head().weight(), other.model.head().weight());
}

#[test]
fn translating_the_object_by_a_patch_keeps_the_class() {
    let (cats, train) = corpus(500, 21, "train");
    let model = train_on_images(&train, &cats, &TrainConfig::desk()).unwrap().model;
    let patch = TrainConfig::desk().grid.patch as i64;
    let kinds = [Shape::Circle, Shape::Square, Shape::Triangle];
    let mut kept = 0;
    for i in 0..50u64 {
        let mut r = rng(1000 + i);
        let kind = kinds[(i % 3) as usize];
        let bg = shapes::noise_background(64, 64, &mut r);
        let p = shapes::place(&[kind], 64, 64, &mut r).unwrap()[0];
        let dx = if p.x as i64 + p.size as i64 + patch <= 64 { patch } else { -patch };
        let moved = p.translated(dx, 0);
        let argmax = |img| {
            let s = model.predict(&img).unwrap();
            let v = s.values();
            (0..v.len()).fold(0, |b, c| if v[c] > v[b] { c } else { b })
        };
        let before = argmax(shapes::render(&bg, &[p]));
        let after = argmax(shapes::render(&bg, &[moved]));
        assert_eq!(cats.name(before), kind.name(), "example {i} misclassified before the move");
        kept += usize::from(before == after);
    }
    assert!(kept >= 48, "{kept}/50 kept their class");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (cats, train) = corpus(32, 8, "ck");
    let dir = tempfile::tempdir().unwrap();
    for encoder in ["linear", "attention"] {
        let cfg = TrainConfig {
            encoder: encoder.into(),
            embed_dim: 16,
            epochs: 2,
            ..TrainConfig::desk()
        };
        let model = train_on_images(&train, &cats, &cfg).unwrap().model;
        let path = dir.path().join(format!("{encoder}.json"));
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for img in &train[..8] {
            assert_eq!(model.predict(&img.pixels).unwrap(), back.predict(&img.pixels).unwrap());
        }
        let again = dir.path().join(format!("{encoder}-again.json"));
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn memorised_image_reproduces_its_scores() {
    let (cats, train) = corpus(16, 2, "mem");
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::desk()
    };
    let model = train_on_images(&train, &cats, &cfg).unwrap().model;
    let a = model.predict(&train[0].pixels).unwrap();
    let b = model.predict(&train[0].pixels.clone()).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-6);
    }
}
