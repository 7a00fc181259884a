use mbclassify::augment::{
    apply_draw, augment_batch, flip_horizontal, rescale, rotate, zoom, AugmentConfig, ImageDraw,
};
use mbclassify::dataset::{LabeledSample, Loader};
use mbclassify::nn::{build_network, NetworkSpec};
use mbclassify::synthetic::{write_synthetic_dataset, SyntheticConfig};
use mbclassify::trainer::score;
use mbclassify::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![n, h, w, 3], |_| rng.random_range(0..=255) as f32).unwrap()
}

/// Low-frequency image so two bilinear passes stay close to the original.
fn smooth_image(h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
            out.push(127.5 + 100.0 * (std::f32::consts::PI * fx).sin() * (1.3 * fy).cos());
            out.push(60.0 + 150.0 * fy);
            out.push(200.0 - 120.0 * fx * fy);
        }
    }
    out
}

#[test]
fn identity_config_is_identity() {
    let batch = noise_batch(3, 9, 7, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(
        augment_batch(&batch, &AugmentConfig::identity(), &mut rng).unwrap(),
        batch
    );
}

#[test]
fn double_flip_is_identity() {
    let img = noise_batch(1, 6, 5, 2);
    let once = flip_horizontal(img.data(), 6, 5, 3);
    assert_ne!(once, img.data());
    assert_eq!(flip_horizontal(&once, 6, 5, 3), img.data());
}

#[test]
fn same_seed_gives_bit_identical_batches() {
    let batch = noise_batch(4, 16, 16, 3);
    let cfg = AugmentConfig {
        seed: 42,
        ..AugmentConfig::default()
    };
    let a = augment_batch(&batch, &cfg, &mut cfg.batch_rng(2, 5)).unwrap();
    let b = augment_batch(&batch, &cfg, &mut cfg.batch_rng(2, 5)).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = augment_batch(&batch, &cfg, &mut cfg.batch_rng(2, 6)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn draws_follow_flip_angle_zoom_order() {
    let cfg = AugmentConfig {
        seed: 1,
        ..AugmentConfig::default()
    };
    let mut rng = cfg.batch_rng(1, 0);
    let d = ImageDraw::draw(&cfg, &mut rng);
    let mut raw = cfg.batch_rng(1, 0);
    let (u1, u2, u3): (f64, f64, f64) = (raw.random(), raw.random(), raw.random());
    assert_eq!(d.flip, u1 < 0.5);
    assert_eq!(d.angle, (2.0 * u2 - 1.0) * 0.2 * std::f64::consts::TAU);
    assert_eq!(d.scale, 1.0 + (2.0 * u3 - 1.0) * 0.2);
    assert!(d.angle.abs() <= 0.4 * std::f64::consts::PI);
    assert!((0.8..=1.2).contains(&d.scale));
}

#[test]
fn rescale_examples() {
    let t = Tensor::new(vec![3], vec![255.0f32, 0.0, 51.0]).unwrap();
    assert_eq!(rescale(&t).data(), &[1.0, 0.0, 0.2]);
    let t = Tensor::new(vec![1], vec![51.0f64]).unwrap();
    assert_eq!(rescale(&t).data(), &[0.2]);
}

#[test]
fn rotation_round_trip_small_angles() {
    let (h, w) = (48, 48);
    let img = smooth_image(h, w);
    for f in [0.002, -0.004, 0.006, 0.008] {
        let angle = f * std::f64::consts::TAU;
        let back = rotate(&rotate(&img, h, w, 3, angle), h, w, 3, -angle);
        let mut worst = 0.0f32;
        for y in 2..h - 2 {
            for x in 2..w - 2 {
                for c in 0..3 {
                    let i = (y * w + x) * 3 + c;
                    worst = worst.max((back[i] - img[i]).abs());
                }
            }
        }
        // 2/255 on the unit scale is 2 grey levels on the pixel scale.
        assert!(worst <= 2.0, "factor {f}: {worst}");
    }
}

#[test]
fn rotation_round_trip_inside_inscribed_disc() {
    let (h, w) = (64, 64);
    let img = smooth_image(h, w);
    for f in [0.05, -0.1, 0.15, -0.2] {
        let angle = f * std::f64::consts::TAU;
        let back = rotate(&rotate(&img, h, w, 3, angle), h, w, 3, -angle);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let radius = h.min(w) as f64 / 2.0 - 2.0;
        let mut worst = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                if ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() > radius {
                    continue;
                }
                for c in 0..3 {
                    let i = (y * w + x) * 3 + c;
                    worst = worst.max((back[i] - img[i]).abs());
                }
            }
        }
        assert!(worst <= 2.0, "factor {f}: {worst}");
    }
}

#[test]
fn zoom_of_one_and_rotation_of_zero_are_exact() {
    let img = noise_batch(1, 10, 12, 4);
    assert_eq!(zoom(img.data(), 10, 12, 3, 1.0), img.data());
    assert_eq!(rotate(img.data(), 10, 12, 3, 0.0), img.data());
    let draw = ImageDraw {
        flip: false,
        angle: 0.0,
        scale: 1.0,
    };
    assert_eq!(apply_draw(img.data(), 10, 12, 3, &draw), img.data());
}

#[test]
fn validation_path_only_rescales() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        per_class: 3,
        seed: 5,
        ..SyntheticConfig::default()
    };
    let samples: Vec<LabeledSample> = write_synthetic_dataset(dir.path(), &cfg).unwrap().samples;
    let (net, store) = build_network::<f32>(&NetworkSpec::desk(), 1).unwrap();
    let mut loader = Loader::new(samples.clone(), (64, 64), true);
    let scores = score(&net, &store, &mut loader, 4).unwrap();

    let raw: Vec<Tensor<f32>> = (0..samples.len())
        .map(|i| loader.image(i).unwrap())
        .collect();
    let raw = Tensor::stack(&raw).unwrap();
    let direct = net.forward(&store, &rescale(&raw)).unwrap();
    assert_eq!(scores.probs, direct);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn augmentation_keeps_shape_and_range(
        n in 1usize..3, h in 1usize..12, w in 1usize..12, seed in any::<u64>(),
        flip in 0.0f64..=1.0, rot in 0.0f64..0.5, zoom_f in 0.0f64..0.9,
    ) {
        let batch = noise_batch(n, h, w, seed);
        let cfg = AugmentConfig {
            flip_probability: flip,
            rotation_factor: rot,
            zoom_factor: zoom_f,
            seed,
            ..AugmentConfig::default()
        };
        let out = augment_batch(&batch, &cfg, &mut cfg.batch_rng(1, 0)).unwrap();
        prop_assert_eq!(out.dims(), batch.dims());
        prop_assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }
}
