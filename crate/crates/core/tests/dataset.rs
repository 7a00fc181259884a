use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mbclassify::dataset::{
    decode_image, read_manifest, resize, save_ppm, scan_dataset, split, train_size, BatchPlan,
    LabeledSample, Loader, SplitConfig,
};
use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};
use mbclassify::{Error, Tensor};
use proptest::prelude::*;

const CLASSES: [&str; 5] = [
    "Bud Root Dropping",
    "Bud Rot",
    "Gray Leaf Spot",
    "Leaf Rot",
    "Stem Bleeding",
];

fn write_p6(path: &Path, w: usize, h: usize, pixels: &[u8]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).unwrap();
}

#[test]
fn scan_sorts_named_classes() {
    let dir = tempfile::tempdir().unwrap();
    // Created out of order on purpose.
    for (i, name) in CLASSES.iter().rev().enumerate() {
        let d = dir.path().join(name);
        fs::create_dir(&d).unwrap();
        for j in 0..=i {
            write_p6(&d.join(format!("{j}.ppm")), 1, 1, &[0, 0, 0]);
        }
    }
    let idx = scan_dataset(dir.path()).unwrap();
    assert_eq!(idx.classes, CLASSES);
    for s in &idx.samples {
        assert_eq!(idx.classes[s.class_index], s.class_name);
    }
    let mut paths: Vec<_> = idx.samples.iter().map(|s| s.image_path.clone()).collect();
    let sorted = {
        let mut p = paths.clone();
        p.sort();
        p
    };
    assert_eq!(paths, sorted);
    paths.dedup();
    assert_eq!(paths.len(), 15);
}

#[test]
fn scan_single_class_and_duplicate_names() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    fs::create_dir(&a).unwrap();
    for j in 0..3 {
        write_p6(&a.join(format!("{j}.ppm")), 1, 1, &[1, 2, 3]);
    }
    let idx = scan_dataset(dir.path()).unwrap();
    assert_eq!(idx.samples.len(), 3);
    assert!(idx.samples.iter().all(|s| s.class_index == 0));

    let b = dir.path().join("b");
    fs::create_dir(&b).unwrap();
    write_p6(&b.join("0.ppm"), 1, 1, &[1, 2, 3]);
    let idx = scan_dataset(dir.path()).unwrap();
    assert_eq!(idx.samples.len(), 4);
    assert_ne!(idx.samples[0].image_path, idx.samples[3].image_path);
    assert_eq!(idx.samples[3].class_index, 1);
}

#[test]
fn scan_warns_on_empty_class_and_fails_on_no_classes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(scan_dataset(dir.path()), Err(Error::Data(_))));
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::create_dir(dir.path().join("full")).unwrap();
    write_p6(&dir.path().join("full/x.ppm"), 1, 1, &[0, 0, 0]);
    let idx = scan_dataset(dir.path()).unwrap();
    assert_eq!(idx.warnings.len(), 1);
    assert!(idx.warnings[0].contains("empty"));
}

#[test]
fn manifest_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("list.tsv");
    fs::write(
        &m,
        "# comment\nimgs/1.ppm\tLeaf Rot\nimgs/2.ppm\tBud Rot\n\nimgs/3.ppm\tLeaf Rot\n",
    )
    .unwrap();
    let idx = read_manifest(&m).unwrap();
    assert_eq!(idx.classes, ["Bud Rot", "Leaf Rot"]);
    let labels: Vec<usize> = idx.samples.iter().map(|s| s.class_index).collect();
    assert_eq!(labels, [1, 0, 1]);
    assert_eq!(idx.samples[0].image_path, dir.path().join("imgs/1.ppm"));

    fs::write(&m, "no tab here\n").unwrap();
    let err = read_manifest(&m).unwrap_err().to_string();
    assert!(err.contains(":1:"), "{err}");
}

#[test]
fn split_examples() {
    let xs: Vec<u32> = (0..5858).collect();
    let cfg = SplitConfig {
        seed: 3,
        ..SplitConfig::default()
    };
    let (a, b) = split(&xs, &cfg).unwrap();
    assert_eq!((a.len(), b.len()), (4687, 1171));
    let (a2, b2) = split(&xs, &cfg).unwrap();
    assert_eq!((a, b), (a2, b2));

    let (a, b) = split(&(0..10).collect::<Vec<_>>(), &cfg).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
}

#[test]
fn p6_decodes_exact_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    let px = [0u8, 10, 20, 30, 40, 50, 60, 70, 80, 255, 254, 253];
    write_p6(&path, 2, 2, &px);
    let img = decode_image(&path).unwrap();
    assert_eq!(img.dims(), &[2, 2, 3]);
    let want: Vec<f32> = px.iter().map(|&b| b as f32).collect();
    assert_eq!(img.data(), want.as_slice());
}

#[test]
fn grayscale_is_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.pgm");
    let mut bytes = b"P5\n# a comment\n3 1\n255\n".to_vec();
    bytes.extend_from_slice(&[7, 100, 250]);
    fs::write(&path, bytes).unwrap();
    let img = decode_image(&path).unwrap();
    assert_eq!(img.dims(), &[1, 3, 3]);
    assert_eq!(
        img.data(),
        &[7.0, 7.0, 7.0, 100.0, 100.0, 100.0, 250.0, 250.0, 250.0]
    );
}

#[test]
fn truncated_and_unknown_files_fail_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ppm");
    fs::write(&path, b"P6\n4 4\n255\n\x01\x02\x03").unwrap();
    match decode_image(&path) {
        Err(Error::Decode { path: p, .. }) => assert_eq!(p, path),
        other => panic!("expected decode error, got {other:?}"),
    }
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not an image").unwrap();
    assert!(matches!(decode_image(&junk), Err(Error::Decode { .. })));
}

#[test]
fn resize_examples() {
    let big = Tensor::from_fn(vec![768, 1024, 3], |i| (i % 256) as f32).unwrap();
    assert_eq!(resize(&big, (300, 300)).unwrap().dims(), &[300, 300, 3]);

    let img = Tensor::from_fn(vec![300, 300, 3], |i| ((i * 37) % 256) as f32).unwrap();
    let same = resize(&img, (300, 300)).unwrap();
    assert!(same.max_abs_diff(&img).unwrap() <= 1.0 / 255.0);

    let flat = Tensor::full(vec![17, 23, 3], 91.0f32).unwrap();
    for size in [(1, 1), (5, 40), (64, 64)] {
        let r = resize(&flat, size).unwrap();
        assert!(r.data().iter().all(|&v| (v - 91.0).abs() < 1e-4));
    }
}

fn corpus(dir: &Path, per_class: usize) -> Vec<LabeledSample> {
    let cfg = SyntheticConfig {
        per_class,
        size: 8,
        seed: 2,
        ..SyntheticConfig::default()
    };
    write_synthetic_dataset(dir, &cfg).unwrap().samples
}

#[test]
fn batch_sizes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path(), 20);
    let plan = BatchPlan {
        seed: 4,
        ..BatchPlan::default()
    };
    let mut loader = Loader::new(samples, (8, 8), true);
    let sizes: Vec<usize> = loader
        .batches(&plan, 1)
        .map(|b| b.unwrap().labels.len())
        .collect();
    assert_eq!(sizes, [32, 32, 32, 4]);
    let mut delivered: Vec<usize> = loader
        .batches(&plan, 1)
        .flat_map(|b| b.unwrap().labels)
        .collect();
    let mut expected = loader.labels();
    delivered.sort_unstable();
    expected.sort_unstable();
    assert_eq!(delivered, expected);

    let a: Vec<_> = loader.batches(&plan, 2).map(|b| b.unwrap()).collect();
    let b: Vec<_> = loader.batches(&plan, 2).map(|b| b.unwrap()).collect();
    assert_eq!(a, b);
    let c: Vec<_> = loader
        .batches(&plan, 3)
        .map(|b| b.unwrap().indices)
        .collect();
    assert_ne!(a.iter().map(|b| b.indices.clone()).collect::<Vec<_>>(), c);
}

#[test]
fn second_epoch_reads_nothing_when_cached() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path(), 6);
    let plan = BatchPlan {
        batch_size: 7,
        seed: 1,
        ..BatchPlan::default()
    };
    let mut cached = Loader::new(samples.clone(), (8, 8), true);
    let mut plain = Loader::new(samples, (8, 8), false);
    for epoch in 1..=3 {
        let before = cached.reads();
        let a: Vec<_> = cached.batches(&plan, epoch).map(|b| b.unwrap()).collect();
        let b: Vec<_> = plain.batches(&plan, epoch).map(|b| b.unwrap()).collect();
        assert_eq!(a, b, "cache changed epoch {epoch}");
        let reads = cached.reads() - before;
        assert_eq!(reads, if epoch == 1 { 30 } else { 0 });
    }
    assert_eq!(plain.reads(), 90);
}

#[test]
fn loader_surfaces_decode_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = corpus(dir.path(), 1);
    fs::write(&samples[2].image_path, b"P6\n8 8\n255\n").unwrap();
    samples.truncate(3);
    let mut loader = Loader::new(samples, (8, 8), true);
    let plan = BatchPlan {
        shuffle: false,
        ..BatchPlan::default()
    };
    let err = loader.batches(&plan, 1).next().unwrap().unwrap_err();
    assert!(matches!(err, Error::Decode { .. }));
}

#[test]
fn ppm_written_by_library_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::from_fn(vec![3, 5, 3], |i| ((i * 13) % 256) as f32).unwrap();
    let path = dir.path().join("r.ppm");
    save_ppm(&path, &img).unwrap();
    assert_eq!(decode_image(&path).unwrap(), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_is_a_ceil_partition(n in 2usize..10_000, pct in 1u32..100, seed in any::<u64>()) {
        let xs: Vec<usize> = (0..n).collect();
        let cfg = SplitConfig { train_fraction: pct as f64 / 100.0, seed, shuffle: true };
        let (train, val) = split(&xs, &cfg).unwrap();
        let want = (pct as usize * n).div_ceil(100).clamp(1, n - 1);
        prop_assert_eq!(train.len(), want);
        prop_assert_eq!(train_size(n, cfg.train_fraction), want);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, xs);
    }

    #[test]
    fn epoch_covers_every_label_once(
        labels in prop::collection::vec(0usize..5, 1..120),
        batch in 1usize..40, epoch in 1usize..10, drop_last in any::<bool>(),
    ) {
        let samples: Vec<LabeledSample> = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| LabeledSample {
                image_path: format!("{i}.ppm").into(),
                class_index: c,
                class_name: c.to_string(),
            })
            .collect();
        let plan = BatchPlan { batch_size: batch, drop_last, shuffle: true, seed: 5 };
        let order = plan.epoch_order(samples.len(), epoch);
        let sizes = plan.batch_sizes(samples.len());
        let delivered: usize = sizes.iter().sum();
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &order[..delivered] {
            *seen.entry(samples[i].class_index).or_default() += 1;
        }
        if drop_last {
            prop_assert_eq!(delivered, samples.len() / batch * batch);
        } else {
            let mut want: BTreeMap<usize, usize> = BTreeMap::new();
            for &l in &labels {
                *want.entry(l).or_default() += 1;
            }
            prop_assert_eq!(seen, want);
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..samples.len()).collect::<Vec<_>>());
    }
}
