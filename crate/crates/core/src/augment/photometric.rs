use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::image::ImageArray;
use crate::rng::Rng;

/// Multiplicative factors; 1.0 leaves the image unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl JitterParams {
    pub const IDENTITY: Self = Self {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };
}

pub fn adjust_brightness(img: &ImageArray, factor: f64) -> ImageArray {
    img.map_clamped(|v| v * factor)
}

/// Blend every value toward the image mean.
pub fn adjust_contrast(img: &ImageArray, factor: f64) -> ImageArray {
    let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
    img.map_clamped(|v| mean + (v - mean) * factor)
}

/// Blend RGB pixels toward their luma; single-channel images are returned unchanged.
pub fn adjust_saturation(img: &ImageArray, factor: f64) -> ImageArray {
    if img.channels() != 3 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        data.extend(px.iter().map(|&v| (luma + (v - luma) * factor).clamp(0.0, 1.0)));
    }
    img.with_data(data)
}

pub fn apply_jitter(img: &ImageArray, p: JitterParams) -> ImageArray {
    let mut out = img.clone();
    if p.brightness != 1.0 {
        out = adjust_brightness(&out, p.brightness);
    }
    if p.contrast != 1.0 {
        out = adjust_contrast(&out, p.contrast);
    }
    if p.saturation != 1.0 {
        out = adjust_saturation(&out, p.saturation);
    }
    out
}

/// Color jitter with factors drawn uniformly from `[1 - strength, 1 + strength]`.
/// `strength == 0` returns the input unchanged and consumes no randomness.
pub fn photometric_jitter(img: &ImageArray, strength: f64, rng: &mut Rng) -> ImageArray {
    let strength = strength.clamp(0.0, 1.0);
    if strength == 0.0 {
        return img.clone();
    }
    let lo = 1.0 - strength;
    let hi = 1.0 + strength;
    let p = JitterParams {
        brightness: rng.random_range(lo..hi),
        contrast: rng.random_range(lo..hi),
        saturation: rng.random_range(lo..hi),
    };
    apply_jitter(img, p)
}

pub fn gaussian_noise(img: &ImageArray, sigma: f64, rng: &mut Rng) -> ImageArray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    img.map_clamped(|v| v + normal.sample(rng))
}
