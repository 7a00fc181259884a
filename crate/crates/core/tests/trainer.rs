mod common;

use mbclassify::dataset::{split, Loader, SplitConfig};
use mbclassify::nn::{build_network, load_checkpoint, NetworkSpec, ParameterStore};
use mbclassify::optim::{Schedule, Segment};
use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};
use mbclassify::trainer::{evaluate, fit, predict, CheckpointTarget, NoObserver, TrainConfig};
use mbclassify::Error;

fn small_corpus(
    root: &std::path::Path,
    per_class: usize,
    size: usize,
    seed: u64,
) -> mbclassify::dataset::DatasetIndex {
    let cfg = SyntheticConfig {
        per_class,
        size,
        seed,
        ..SyntheticConfig::default()
    };
    write_synthetic_dataset(root, &cfg).unwrap()
}

fn changed_values(a: &ParameterStore<f32>, b: &ParameterStore<f32>) -> (usize, usize) {
    let (mut trainable, mut frozen) = (0, 0);
    for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
        let n = p
            .tensor
            .data()
            .iter()
            .zip(q.tensor.data())
            .filter(|(x, y)| x.to_bits() != y.to_bits())
            .count();
        if p.trainable {
            trainable += n;
        } else {
            frozen += n;
        }
    }
    (trainable, frozen)
}

#[test]
fn zero_epochs_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(&dir.path().join("data"), 2, 64, 1);
    let (net, mut store) = build_network::<f32>(&NetworkSpec::desk(), 9).unwrap();
    let init = store.clone();
    let mut cfg = TrainConfig::new(Schedule::single(Segment::adam(5)).unwrap(), 1);
    cfg.epochs = 0;
    let path = dir.path().join("ckpt.dsqc");
    cfg.checkpoint = Some(CheckpointTarget {
        path: path.clone(),
        init_seed: 9,
        classes: index.classes.clone(),
        split: None,
    });
    let mut train = Loader::new(index.samples, (64, 64), false);
    let out = fit(&net, &mut store, &mut train, None, &cfg, &mut NoObserver).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(store, init);
    assert_eq!(load_checkpoint::<f32>(&path).unwrap().store, init);
}

#[test]
fn zero_head_gives_uniform_loss_and_class_zero_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 3, 64, 2);
    let (net, mut store) = build_network::<f32>(&NetworkSpec::desk(), 3).unwrap();
    let head = net.classifier();
    for id in [head.weight, head.bias] {
        store.get_mut(id).tensor.data_mut().fill(0.0);
    }
    let class0 = index.samples.iter().filter(|s| s.class_index == 0).count() as f64
        / index.samples.len() as f64;
    let mut set = Loader::new(index.samples, (64, 64), true);
    let e = evaluate(&net, &store, &mut set, 4).unwrap();
    assert!((e.loss - 5f64.ln()).abs() < 1e-6, "{}", e.loss);
    assert_eq!(e.accuracy, class0);
}

#[test]
fn evaluate_is_pure_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 4, 64, 3);
    let (net, store) = build_network::<f32>(&NetworkSpec::desk(), 4).unwrap();
    let before = store.clone();
    let mut set = Loader::new(index.samples, (64, 64), true);
    let a = evaluate(&net, &store, &mut set, 7).unwrap();
    let b = evaluate(&net, &store, &mut set, 7).unwrap();
    assert_eq!(store, before);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.confusion, b.confusion);
    assert_eq!(a.report, b.report);
    assert_eq!(a.roc, b.roc);
    assert_eq!(a.top_k, b.top_k);

    let mut empty = Loader::new(Vec::new(), (64, 64), false);
    assert!(matches!(
        evaluate(&net, &store, &mut empty, 4),
        Err(Error::Usage(_))
    ));
}

#[test]
fn fitted_toy_generalizes_and_train_eval_tracks_val() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 40, 64, 5);
    let (train, val) = split(
        &index.samples,
        &SplitConfig {
            seed: 5,
            ..SplitConfig::default()
        },
    )
    .unwrap();
    let (net, mut store) = build_network::<f32>(&NetworkSpec::desk(), 5).unwrap();
    let mut train = Loader::new(train, (64, 64), true);
    let mut val = Loader::new(val, (64, 64), true);
    let mut cfg = TrainConfig::new(
        Schedule::new(vec![Segment::adam(3), Segment::sgd(2)]).unwrap(),
        5,
    );
    cfg.batch_size = 16;
    let out = fit(
        &net,
        &mut store,
        &mut train,
        Some(&mut val),
        &cfg,
        &mut NoObserver,
    )
    .unwrap();
    let h = &out.history.records;
    assert_eq!(h.len(), 5);
    assert!(h[4].train_loss < h[0].train_loss);
    assert!(h
        .iter()
        .all(|r| r.seconds > 0.0 && r.val_accuracy.is_some()));
    assert_eq!(
        out.metadata.optimizers,
        ["adam", "adam", "adam", "sgd", "sgd"]
    );

    let on_val = evaluate(&net, &store, &mut val, 32).unwrap();
    assert_eq!(Some(on_val.accuracy), h[4].val_accuracy);
    let on_train = evaluate(&net, &store, &mut train, 32).unwrap();
    assert!(
        on_train.accuracy >= on_val.accuracy - 0.05,
        "{} vs {}",
        on_train.accuracy,
        on_val.accuracy
    );
}

#[test]
fn frozen_fidelity_training_touches_only_the_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 2, 64, 6);
    let mut spec = NetworkSpec::fidelity_b3();
    spec.input_size = [64, 64, 3];
    let (net, mut store) = build_network::<f32>(&spec, 6).unwrap();
    assert_eq!(store.counts().trainable, 7685);
    // Stand-in for pretrained weights. With random weights and beta = 0 about
    // a tenth of the head features sit on the relu6 floor for every image,
    // so their classifier rows get no gradient. A narrow, positive head
    // batch norm keeps every feature near 1.
    let gamma = store.id("head/bn/gamma").unwrap();
    let beta = store.id("head/bn/beta").unwrap();
    store.get_mut(gamma).tensor.data_mut().fill(0.1);
    store.get_mut(beta).tensor.data_mut().fill(1.0);
    let init = store.clone();
    let mut train = Loader::new(index.samples, (64, 64), true);
    let mut cfg = TrainConfig::new(
        Schedule::new(vec![Segment::adam(1), Segment::sgd(1)]).unwrap(),
        6,
    );
    cfg.batch_size = 10;
    fit(&net, &mut store, &mut train, None, &cfg, &mut NoObserver).unwrap();
    assert_eq!(changed_values(&init, &store), (7685, 0));
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 2, 64, 8);
    let (net, mut store) = build_network::<f32>(&NetworkSpec::desk(), 8).unwrap();
    store.get_mut(net.classifier().bias).tensor.data_mut()[0] = f32::NAN;
    let mut train = Loader::new(index.samples, (64, 64), false);
    let cfg = TrainConfig::new(Schedule::single(Segment::sgd(1)).unwrap(), 8);
    match fit(&net, &mut store, &mut train, None, &cfg, &mut NoObserver) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch 1 batch 0"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_train_config_is_rejected() {
    let (net, mut store) = build_network::<f32>(&NetworkSpec::desk(), 1).unwrap();
    let mut train = Loader::new(Vec::new(), (64, 64), false);
    let mut cfg = TrainConfig::new(Schedule::single(Segment::adam(2)).unwrap(), 1);
    cfg.batch_size = 0;
    assert!(matches!(
        fit(&net, &mut store, &mut train, None, &cfg, &mut NoObserver),
        Err(Error::Config(_))
    ));
    cfg.batch_size = 4;
    cfg.epochs = 3;
    assert!(matches!(
        fit(&net, &mut store, &mut train, None, &cfg, &mut NoObserver),
        Err(Error::Config(_))
    ));
}

#[test]
fn predict_returns_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let index = small_corpus(dir.path(), 1, 80, 10);
    let (net, store) = build_network::<f32>(&NetworkSpec::desk(), 10).unwrap();
    let path = &index.samples[0].image_path;
    let a = predict(&net, &store, &index.classes, path).unwrap();
    let b = predict(&net, &store, &index.classes, path).unwrap();
    assert_eq!(a.probabilities.len(), 5);
    assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(a.probabilities, b.probabilities);
    assert_eq!(a.class_name, index.classes[a.class_index]);
    assert!(a.seconds > 0.0);

    let bad = dir.path().join("broken.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\n\x00\x01").unwrap();
    assert!(matches!(
        predict(&net, &store, &index.classes, &bad),
        Err(Error::Decode { .. })
    ));
}
