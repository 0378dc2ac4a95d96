//! Training-time augmentation: flip, rotation, colour jitter, resized crop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{grayscale, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotate_deg: f64,
    pub jitter_strength: f64,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotate_deg: 15.0,
            jitter_strength: 0.2,
            crop_scale_min: 0.8,
            crop_scale_max: 1.0,
        }
    }
}

impl AugmentConfig {
    /// Parameters under which [`augment`] is the identity.
    pub fn neutral() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotate_deg: 0.0,
            jitter_strength: 0.0,
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.max_rotate_deg >= 0.0
            && (0.0..1.0).contains(&self.jitter_strength)
            && self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid augmentation config {self:?}"
            )))
        }
    }
}

pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = image.chw().expect("image is [C, H, W]");
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    debug_assert_eq!(out.len(), c * h * w);
    out
}

/// Bilinear sample at fractional `(y, x)`; neighbours outside the image read as 0.
fn sample_zero_fill(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    if y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64 {
        return 0.0;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x0 + 1.0) * (1.0 - fy) * fx
        + at(y0 + 1.0, x0) * fy * (1.0 - fx)
        + at(y0 + 1.0, x0 + 1.0) * fy * fx;
    v as f32
}

/// Rotates counter-clockwise by `degrees` about the image centre.
pub fn rotate(image: &Tensor<f32>, degrees: f64) -> Tensor<f32> {
    let (c, h, w) = image.chw().expect("image is [C, H, W]");
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = image.channel(ch);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // inverse rotation maps output pixels back to the source
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                out.push(sample_zero_fill(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::new([c, h, w], out).expect("shape preserved")
}

/// Bilinear resize of the window `[top, top + src_h) x [left, left + src_w)`
/// to `out_h x out_w` using half-pixel centres and edge clamping.
pub fn resize_region(
    image: &Tensor<f32>,
    top: usize,
    left: usize,
    src_h: usize,
    src_w: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor<f32> {
    let (c, _, w) = image.chw().expect("image is [C, H, W]");
    let (sy, sx) = (src_h as f64 / out_h as f64, src_w as f64 / out_w as f64);
    let coord = |o: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = image.channel(ch);
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, sy, src_h);
            for ox in 0..out_w {
                let (x0, x1, fx) = coord(ox, sx, src_w);
                let p = |yy: usize, xx: usize| plane[(top + yy) * w + left + xx] as f64;
                let v = p(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + p(y0, x1) * (1.0 - fy) * fx
                    + p(y1, x0) * fy * (1.0 - fx)
                    + p(y1, x1) * fy * fx;
                out.push(v as f32);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out).expect("sizes match")
}

pub fn resize(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (_, h, w) = image.chw().expect("image is [C, H, W]");
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    resize_region(image, 0, 0, h, w, out_h, out_w)
}

fn jitter(image: &mut Tensor<f32>, brightness: f32, contrast: f32, saturation: f32) {
    let (_, h, w) = image.chw().expect("image is [C, H, W]");
    let plane = h * w;
    if brightness != 1.0 {
        image.data_mut().iter_mut().for_each(|v| *v *= brightness);
    }
    if contrast != 1.0 {
        let gray = grayscale(image).expect("three channels");
        let mean = gray.data().iter().map(|&v| v as f64).sum::<f64>() as f32 / plane as f32;
        image
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = mean + contrast * (*v - mean));
    }
    if saturation != 1.0 {
        let gray = grayscale(image).expect("three channels");
        for ch in image.data_mut().chunks_exact_mut(plane) {
            for (v, &g) in ch.iter_mut().zip(gray.data()) {
                *v = g + saturation * (*v - g);
            }
        }
    }
}

/// Applies flip, rotation, colour jitter and a random square crop, in that
/// order, then clamps to `[0, 1]`.
pub fn augment<R: Rng>(sample: &Sample, rng: &mut R, cfg: &AugmentConfig) -> Sample {
    let mut image = sample.image.clone();
    let (_, h, w) = image.chw().expect("image is [C, H, W]");

    if rng.random::<f64>() < cfg.flip_prob {
        image = hflip(&image);
    }

    let angle = rng.random_range(-cfg.max_rotate_deg..=cfg.max_rotate_deg);
    if angle != 0.0 {
        image = rotate(&image, angle);
    }

    let s = cfg.jitter_strength;
    let mut factor = || rng.random_range(1.0 - s..=1.0 + s) as f32;
    let (b, c, sat) = (factor(), factor(), factor());
    jitter(&mut image, b, c, sat);

    let area = rng.random_range(cfg.crop_scale_min..=cfg.crop_scale_max);
    let side = ((area * (h * w) as f64).sqrt().round() as usize).clamp(1, h.min(w));
    let top = rng.random_range(0..=h - side);
    let left = rng.random_range(0..=w - side);
    if side != h || side != w {
        image = resize_region(&image, top, left, side, side, h, w);
    }

    image
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
    Sample {
        image,
        label: sample.label,
        id: sample.id.clone(),
    }
}
