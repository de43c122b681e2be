use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Image, Sample};
use crate::rng::Rng;

/// Ranges for the random crop / flip / jitter pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Crop side as a fraction of the image's shorter side.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// Multiplicative contrast around the image mean.
    pub contrast: (f64, f64),
    /// Additive brightness offset.
    pub brightness: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.7, 1.0),
            flip_prob: 0.5,
            contrast: (0.8, 1.2),
            brightness: (-0.1, 0.1),
        }
    }
}

/// One concrete draw of the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub crop_side: usize,
    pub crop_top: usize,
    pub crop_left: usize,
    pub flip: bool,
    pub contrast: f64,
    pub brightness: f64,
}

impl AugmentParams {
    /// Full-frame crop, no flip, neutral jitter.
    pub fn neutral(image: &Image) -> Self {
        Self {
            crop_side: image.height.min(image.width),
            crop_top: 0,
            crop_left: 0,
            flip: false,
            contrast: 1.0,
            brightness: 0.0,
        }
    }

    pub fn draw(image: &Image, config: &AugmentConfig, rng: &mut Rng) -> Self {
        let min_side = image.height.min(image.width);
        let scale = uniform(rng, config.crop_scale);
        let crop_side = (libm::round(scale * min_side as f64) as usize).clamp(1, min_side);
        let crop_top = rng.random_range(0..=image.height - crop_side);
        let crop_left = rng.random_range(0..=image.width - crop_side);
        let flip = rng.random_bool(config.flip_prob);
        let contrast = uniform(rng, config.contrast);
        let brightness = uniform(rng, config.brightness);
        Self {
            crop_side,
            crop_top,
            crop_left,
            flip,
            contrast,
            brightness,
        }
    }

    pub fn apply(&self, image: &Image, out_size: usize) -> Image {
        let side = self.crop_side;
        let mut crop = Image::filled(side, side, 0.0);
        for y in 0..side {
            let row = (self.crop_top + y) * image.width + self.crop_left;
            crop.pixels[y * side..][..side].copy_from_slice(&image.pixels[row..][..side]);
        }
        let mut out = resize_bilinear(&crop, out_size, out_size);
        if self.flip {
            for row in out.pixels.chunks_mut(out_size) {
                row.reverse();
            }
        }
        if self.contrast != 1.0 || self.brightness != 0.0 {
            let mean = out.mean();
            for p in &mut out.pixels {
                *p = ((*p - mean) * self.contrast + mean + self.brightness).clamp(0.0, 1.0);
            }
        }
        out
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random crop → resize to `out_size` → horizontal flip → brightness and
/// contrast jitter, with the default ranges. Label and domain pass through.
pub fn augment(sample: &Sample, rng: &mut Rng, out_size: usize) -> Sample {
    augment_with(sample, rng, out_size, &AugmentConfig::default())
}

pub fn augment_with(sample: &Sample, rng: &mut Rng, out_size: usize, config: &AugmentConfig) -> Sample {
    let params = AugmentParams::draw(&sample.image, config, rng);
    Sample {
        id: sample.id.clone(),
        image: params.apply(&sample.image, out_size),
        label: sample.label,
        domain: sample.domain,
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Image {
    if image.height == out_h && image.width == out_w {
        return image.clone();
    }
    let sy = image.height as f64 / out_h as f64;
    let sx = image.width as f64 / out_w as f64;
    let mut out = Image::filled(out_h, out_w, 0.0);
    let taps = |pos: f64, len: usize| {
        let p = pos.max(0.0);
        let i0 = (libm::floor(p) as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    for y in 0..out_h {
        let (y0, y1, fy) = taps((y as f64 + 0.5) * sy - 0.5, image.height);
        for x in 0..out_w {
            let (x0, x1, fx) = taps((x as f64 + 0.5) * sx - 0.5, image.width);
            let top = image.at(y0, x0) * (1.0 - fx) + image.at(y0, x1) * fx;
            let bottom = image.at(y1, x0) * (1.0 - fx) + image.at(y1, x1) * fx;
            out.pixels[y * out_w + x] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
        }
    }
    out
}
