//! Training-time geometric augmentation and pixel rescaling.
//!
//! Per image the random stream is consumed in a fixed order: one flip draw,
//! one angle draw, one zoom draw. All three are drawn even when a factor is
//! zero, so changing one factor never shifts the draws of later images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    #[default]
    Reflect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    /// Maximum rotation as a fraction of a full turn.
    pub rotation_factor: f64,
    /// Maximum relative change of scale.
    pub zoom_factor: f64,
    pub interpolation: Interpolation,
    pub fill: Fill,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_probability: 0.5,
            rotation_factor: 0.2,
            zoom_factor: 0.2,
            interpolation: Interpolation::Bilinear,
            fill: Fill::Reflect,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        AugmentConfig {
            flip_probability: 0.0,
            rotation_factor: 0.0,
            zoom_factor: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip_probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.rotation_factor >= 0.0 && self.rotation_factor.is_finite()) {
            return Err(Error::Config(format!(
                "rotation_factor must be >= 0, got {}",
                self.rotation_factor
            )));
        }
        if !(self.zoom_factor >= 0.0 && self.zoom_factor < 1.0) {
            return Err(Error::Config(format!(
                "zoom_factor must be in [0, 1), got {}",
                self.zoom_factor
            )));
        }
        Ok(())
    }

    /// Stream for one batch of one epoch.
    pub fn batch_rng(&self, epoch: usize, batch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((epoch as u64) << 32) | batch as u64);
        rng
    }
}

/// The random choices made for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageDraw {
    pub flip: bool,
    /// Radians, counter-clockwise.
    pub angle: f64,
    pub scale: f64,
}

impl ImageDraw {
    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = rng.random::<f64>() < cfg.flip_probability;
        let angle = (2.0 * rng.random::<f64>() - 1.0) * cfg.rotation_factor * std::f64::consts::TAU;
        let scale = 1.0 + (2.0 * rng.random::<f64>() - 1.0) * cfg.zoom_factor;
        ImageDraw { flip, angle, scale }
    }
}

/// Augment an `[n, h, w, c]` batch, drawing from `rng`.
pub fn augment_batch(
    batch: &Tensor<f32>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let (n, h, w, c) = batch.shape().nhwc("augment_batch")?;
    let per = h * w * c;
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..n {
        let draw = ImageDraw::draw(cfg, rng);
        let img = &batch.data()[i * per..(i + 1) * per];
        out.extend(apply_draw(img, h, w, c, &draw));
    }
    Tensor::new(batch.dims().to_vec(), out)
}

/// Flip, then rotate, then zoom one `[h, w, c]` image.
pub fn apply_draw(img: &[f32], h: usize, w: usize, c: usize, draw: &ImageDraw) -> Vec<f32> {
    let mut cur = img.to_vec();
    if draw.flip {
        cur = flip_horizontal(&cur, h, w, c);
    }
    if draw.angle != 0.0 {
        cur = rotate(&cur, h, w, c, draw.angle);
    }
    if draw.scale != 1.0 {
        cur = zoom(&cur, h, w, c, draw.scale);
    }
    cur
}

pub fn flip_horizontal(img: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let p = (y * w + x) * c;
            out.extend_from_slice(&img[p..p + c]);
        }
    }
    out
}

/// Rotate counter-clockwise by `angle` radians about the image center.
pub fn rotate(img: &[f32], h: usize, w: usize, c: usize, angle: f64) -> Vec<f32> {
    let (sin, cos) = angle.sin_cos();
    // Inverse map in image coordinates (y down).
    resample(img, h, w, c, |dx, dy| {
        (cos * dx - sin * dy, sin * dx + cos * dy)
    })
}

/// Scale about the image center; `scale > 1` magnifies.
pub fn zoom(img: &[f32], h: usize, w: usize, c: usize, scale: f64) -> Vec<f32> {
    resample(img, h, w, c, |dx, dy| (dx / scale, dy / scale))
}

/// Half-sample symmetric reflection of an integer index: `d c b a | a b c d | d c b a`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn resample(
    img: &[f32],
    h: usize,
    w: usize,
    c: usize,
    src_offset: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<f32> {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; img.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_offset(x as f64 - cx, y as f64 - cy);
            let (sx, sy) = (sx + cx, sy + cy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let (xa, xb) = (reflect(x0, w), reflect(x0 + 1, w));
            let (ya, yb) = (reflect(y0, h), reflect(y0 + 1, h));
            let o = (y * w + x) * c;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| img[(yy * w + xx) * c + ch];
                let top = p(ya, xa) * (1.0 - fx) + p(ya, xb) * fx;
                let bot = p(yb, xa) * (1.0 - fx) + p(yb, xb) * fx;
                out[o + ch] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 255.0);
            }
        }
    }
    out
}

/// Map `[0, 255]` to `[0, 1]` by dividing by 255.
pub fn rescale<T: Element>(batch: &Tensor<T>) -> Tensor<T> {
    let d = T::cast(255.0);
    batch.map(|v| v / d)
}
