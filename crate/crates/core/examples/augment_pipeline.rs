//! Flip, rotate and zoom a batch with a seeded stream, then rescale to [0, 1].
//! The augmented images are written as PPM files next to the originals.

use mbclassify::augment::{augment_batch, rescale, AugmentConfig, ImageDraw};
use mbclassify::dataset::save_ppm;
use mbclassify::synthetic::synthetic_image;
use mbclassify::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images: Vec<Tensor<f32>> = (0..4)
        .map(|k| synthetic_image(k, 48, 10.0, &mut rng))
        .collect();
    let batch = Tensor::stack(&images)?;

    let cfg = AugmentConfig {
        seed: 9,
        ..AugmentConfig::default()
    };
    // The draws a batch will see are reproducible from (seed, epoch, batch).
    let mut peek = cfg.batch_rng(1, 0);
    for i in 0..4 {
        let d = ImageDraw::draw(&cfg, &mut peek);
        println!(
            "image {i}: flip {:<5} angle {:+7.2} deg  scale {:.3}",
            d.flip,
            d.angle.to_degrees(),
            d.scale
        );
    }

    let augmented = augment_batch(&batch, &cfg, &mut cfg.batch_rng(1, 0))?;
    let again = augment_batch(&batch, &cfg, &mut cfg.batch_rng(1, 0))?;
    anyhow::ensure!(augmented == again, "same stream must give the same batch");
    let other = augment_batch(&batch, &cfg, &mut cfg.batch_rng(2, 0))?;
    println!(
        "epoch 1 vs epoch 2 max pixel difference {:.1}",
        augmented.max_abs_diff(&other)?
    );

    for (i, image) in images.iter().enumerate().take(4) {
        save_ppm(&dir.path().join(format!("orig_{i}.ppm")), image)?;
        let aug = augmented.sample(i)?.reshape(vec![48, 48, 3])?;
        save_ppm(&dir.path().join(format!("aug_{i}.ppm")), &aug)?;
    }
    println!("wrote 8 images to {}", dir.path().display());

    let unit = rescale(&augmented);
    let (lo, hi) = unit
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("rescaled range [{lo:.3}, {hi:.3}], shape {:?}", unit.dims());

    let untouched = augment_batch(&batch, &AugmentConfig::identity(), &mut cfg.batch_rng(1, 0))?;
    anyhow::ensure!(untouched == batch, "identity config must not change pixels");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
