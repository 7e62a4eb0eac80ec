use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{Error, Result};

/// Random training-time perturbations. A disabled policy reduces
/// [`augment`] to a center crop and resize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub max_rotation_deg: f64,
    pub max_zoom_frac: f64,
    pub max_brightness_contrast_frac: f64,
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { max_rotation_deg: 5.0, max_zoom_frac: 0.2, max_brightness_contrast_frac: 0.5, enabled: true }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Position of the square crop along the longer axis, in `[0, 1]`.
    pub crop_offset: f64,
    pub rotation_deg: f64,
    /// Values above 1 zoom in.
    pub zoom: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { crop_offset: 0.5, rotation_deg: 0.0, zoom: 1.0, brightness: 1.0, contrast: 1.0 };

    pub fn sample(policy: &AugmentPolicy, rng: &mut impl Rng) -> Self {
        if !policy.enabled {
            return Self::IDENTITY;
        }
        let crop_offset = rng.random::<f64>();
        let rotation_deg = sym(rng, policy.max_rotation_deg);
        let zoom = 1.0 + sym(rng, policy.max_zoom_frac);
        let brightness = 1.0 + sym(rng, policy.max_brightness_contrast_frac);
        let contrast = 1.0 + sym(rng, policy.max_brightness_contrast_frac);
        Self { crop_offset, rotation_deg, zoom, brightness, contrast }
    }
}

fn sym(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn check_image(image: &GrayImage, out_size: usize) -> Result<()> {
    if image.height < 8 || image.width < 8 {
        return Err(Error::invalid(format!("degenerate {}x{} image", image.height, image.width)));
    }
    if out_size == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    Ok(())
}

/// Crop to square, rotate, zoom, and resize in one bilinear resampling,
/// then adjust brightness and contrast. Output is `out_size^2` values in `[0, 1]`.
pub fn apply_augment(image: &GrayImage, p: &AugmentParams, out_size: usize) -> Result<Vec<f32>> {
    check_image(image, out_size)?;
    let (h, w) = (image.height as f64, image.width as f64);
    let side = h.min(w);
    let slack = h.max(w) - side;
    let (top, left) = if image.height >= image.width {
        (p.crop_offset.clamp(0.0, 1.0) * slack, 0.0)
    } else {
        (0.0, p.crop_offset.clamp(0.0, 1.0) * slack)
    };
    let (cy, cx) = (top + side / 2.0, left + side / 2.0);
    let step = side / out_size as f64 / p.zoom;
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();

    let mut out = Vec::with_capacity(out_size * out_size);
    let half = out_size as f64 / 2.0;
    for u in 0..out_size {
        let dy = (u as f64 + 0.5 - half) * step;
        for v in 0..out_size {
            let dx = (v as f64 + 0.5 - half) * step;
            let sy = cy + cos * dy + sin * dx - 0.5;
            let sx = cx - sin * dy + cos * dx - 0.5;
            out.push(bilinear(image, sy, sx));
        }
    }
    if p.brightness != 1.0 || p.contrast != 1.0 {
        let mean = out.iter().sum::<f32>() / out.len() as f32;
        let (b, c) = (p.brightness as f32, p.contrast as f32);
        for v in &mut out {
            *v = (((*v - mean) * c + mean) * b).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Samples at fractional pixel coordinates, replicating edge pixels.
fn bilinear(img: &GrayImage, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    if fy == 0.0 && fx == 0.0 {
        return img.get(y0, x0);
    }
    let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
    let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Draws parameters from `policy` and applies them.
pub fn augment(image: &GrayImage, policy: &AugmentPolicy, out_size: usize, rng: &mut impl Rng) -> Result<Vec<f32>> {
    apply_augment(image, &AugmentParams::sample(policy, rng), out_size)
}

/// Evaluation-time input: center crop and resize.
pub fn preprocess(image: &GrayImage, out_size: usize) -> Result<Vec<f32>> {
    apply_augment(image, &AugmentParams::IDENTITY, out_size)
}
