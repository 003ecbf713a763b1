//! Photometric and geometric augmentation, hybrid MixUp/CutMix batch mixing and
//! test-time augmentation.

mod geometric;
mod mix;
mod photometric;
mod tta;

pub use geometric::{
    geometric_augment, hflip, perspective_warp, random_crop, rotate, GeometricOps,
};
pub use mix::{
    cutmix_box, cutmix_pair, cutmix_with_box, hybrid_mix, mixup_pair, sample_lambda, BBox,
    MixConfig, MixMode, MixedBatch, PixelBox,
};
pub use photometric::{
    adjust_brightness, adjust_contrast, adjust_saturation, apply_jitter, gaussian_noise,
    photometric_jitter, JitterParams,
};
pub use tta::{tta_expand, tta_ops, TTA_ORDER};
