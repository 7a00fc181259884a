//! Seeded toy image corpus: each class has its own base color, overlaid with
//! a random soft gradient and per-pixel noise. Classes are separable by mean
//! color, which geometric augmentation preserves.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{save_ppm, scan_dataset, DatasetIndex};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PALETTE: [[f32; 3]; 5] = [
    [200.0, 50.0, 50.0],
    [50.0, 190.0, 60.0],
    [50.0, 70.0, 200.0],
    [210.0, 200.0, 60.0],
    [60.0, 200.0, 210.0],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 5,
            per_class: 100,
            size: 64,
            noise: 20.0,
            seed: 0,
        }
    }
}

/// Base color of class `k`. The first five are fixed; later ones walk the
/// hue circle.
pub fn class_color(k: usize) -> [f32; 3] {
    if let Some(c) = PALETTE.get(k) {
        return *c;
    }
    let h = (k as f32 * 0.618_034).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [40.0 + 170.0 * r, 40.0 + 170.0 * g, 40.0 + 170.0 * b]
}

pub fn class_name(k: usize) -> String {
    format!("class_{k}")
}

/// One `[size, size, 3]` image of class `k`.
pub fn synthetic_image(k: usize, size: usize, noise: f32, rng: &mut impl Rng) -> Tensor<f32> {
    let base = class_color(k);
    let (gx, gy) = (
        rng.random_range(-15.0f32..15.0),
        rng.random_range(-15.0f32..15.0),
    );
    let mut data = Vec::with_capacity(size * size * 3);
    let span = (size.max(2) - 1) as f32;
    for y in 0..size {
        for x in 0..size {
            let shade = gx * (x as f32 / span - 0.5) + gy * (y as f32 / span - 0.5);
            for c in base {
                let n = if noise > 0.0 {
                    rng.random_range(-noise..noise)
                } else {
                    0.0
                };
                data.push((c + shade + n).clamp(0.0, 255.0).round());
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("sized above")
}

/// Write `<root>/class_<k>/img_<i>.ppm` for every class and return the scan
/// of the written folder.
pub fn write_synthetic_dataset(root: &Path, cfg: &SyntheticConfig) -> Result<DatasetIndex> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.size == 0 {
        return Err(Error::Usage(
            "synthetic dataset needs at least one class, image and pixel".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..cfg.classes {
        let dir = root.join(class_name(k));
        std::fs::create_dir_all(&dir)?;
        for i in 0..cfg.per_class {
            let img = synthetic_image(k, cfg.size, cfg.noise, &mut rng);
            save_ppm(&dir.join(format!("img_{i:04}.ppm")), &img)?;
        }
    }
    scan_dataset(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors_are_distinct() {
        for a in 0..8 {
            for b in (a + 1)..8 {
                let (ca, cb) = (class_color(a), class_color(b));
                let d: f32 = ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).sum();
                assert!(d > 30.0, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn writes_sorted_classes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            per_class: 2,
            size: 4,
            ..Default::default()
        };
        let idx = write_synthetic_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(idx.classes.len(), 5);
        assert_eq!(idx.samples.len(), 10);
        assert_eq!(idx.samples[3].class_index, 1);
    }
}
