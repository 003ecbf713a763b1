use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Dihedral, ImageArray};
use crate::rng::Rng;

/// Which spatial augmentations to draw. `None` disables an op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricOps {
    /// Flip left-right with probability 1/2.
    pub hflip: bool,
    /// Rotate by an angle drawn from `[-max, max]` degrees.
    pub rotate: Option<f64>,
    /// Crop a region whose side is at least this fraction, resized back.
    pub random_crop: Option<f64>,
    /// Move each corner by up to this fraction of the side.
    pub perspective: Option<f64>,
}

impl GeometricOps {
    pub const NONE: Self = Self {
        hflip: false,
        rotate: None,
        random_crop: None,
        perspective: None,
    };
}

impl Default for GeometricOps {
    fn default() -> Self {
        Self {
            hflip: true,
            rotate: Some(15.0),
            random_crop: Some(0.85),
            perspective: Some(0.08),
        }
    }
}

/// Inverse-mapped warp: output pixel `(r, c)` samples the source at `map(r, c)`.
/// Images are resampled bilinearly and masks with nearest neighbour, so masks
/// stay binary. Samples outside the source read as 0 / background.
fn warp(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> (ImageArray, Option<BinaryMask>) {
    let (h, w, ch) = img.shape();
    let out = ImageArray::from_fn(h, w, ch, |r, c, k| {
        let (y, x) = map(r as f64, c as f64);
        img.sample_bilinear(y, x, k)
    });
    let out_mask = mask.map(|m| {
        BinaryMask::from_fn(h, w, |r, c| {
            let (y, x) = map(r as f64, c as f64);
            let (y, x) = (y.round(), x.round());
            y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64 && m.get(y as usize, x as usize)
        })
    });
    (out, out_mask)
}

pub fn hflip(img: &ImageArray, mask: Option<&BinaryMask>) -> (ImageArray, Option<BinaryMask>) {
    (img.hflip(), mask.map(|m| m.apply(Dihedral::HFlip)))
}

/// Counter-clockwise rotation about the image center.
pub fn rotate(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    degrees: f64,
) -> (ImageArray, Option<BinaryMask>) {
    if degrees == 0.0 {
        return (img.clone(), mask.cloned());
    }
    let (h, w, _) = img.shape();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    warp(img, mask, |r, col| {
        let (dy, dx) = (r - cy, col - cx);
        // rows grow downward; this matches Dihedral::Rot90 at +90 degrees
        (cy + c * dy + s * dx, cx - s * dy + c * dx)
    })
}

/// Crop `[top, top + ch) × [left, left + cw)` and resize back to the full size.
pub fn random_crop(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    top: usize,
    left: usize,
    crop_h: usize,
    crop_w: usize,
) -> (ImageArray, Option<BinaryMask>) {
    let (h, w, _) = img.shape();
    let sy = crop_h as f64 / h as f64;
    let sx = crop_w as f64 / w as f64;
    warp(img, mask, |r, c| {
        (
            top as f64 + ((r + 0.5) * sy - 0.5).max(0.0),
            left as f64 + ((c + 0.5) * sx - 0.5).max(0.0),
        )
    })
}

/// Perspective warp that moves the four image corners (TL, TR, BR, BL) by the
/// given `(dy, dx)` offsets in pixels.
pub fn perspective_warp(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    corner_shift: [(f64, f64); 4],
) -> (ImageArray, Option<BinaryMask>) {
    let (h, w, _) = img.shape();
    let (hm, wm) = (h as f64 - 1.0, w as f64 - 1.0);
    let dst = [(0.0, 0.0), (0.0, wm), (hm, wm), (hm, 0.0)];
    let src: Vec<(f64, f64)> = dst
        .iter()
        .zip(corner_shift.iter())
        .map(|(&(y, x), &(dy, dx))| (y + dy, x + dx))
        .collect();
    match homography(&dst, &src) {
        Some(hm) => warp(img, mask, |r, c| {
            let den = hm[6] * c + hm[7] * r + 1.0;
            let x = (hm[0] * c + hm[1] * r + hm[2]) / den;
            let y = (hm[3] * c + hm[4] * r + hm[5]) / den;
            (y, x)
        }),
        None => (img.clone(), mask.cloned()),
    }
}

/// Solves for the 8 homography coefficients mapping `from` points to `to`
/// points, both given as (y, x).
fn homography(from: &[(f64, f64)], to: &[(f64, f64)]) -> Option<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (y, x) = from[i];
        let (v, u) = to[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = a[i][8] / a[i][i];
    }
    Some(out)
}

/// Draws and applies the enabled spatial ops. The same transform is applied to
/// the image and, when given, its mask.
pub fn geometric_augment(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    ops: &GeometricOps,
    rng: &mut Rng,
) -> Result<(ImageArray, Option<BinaryMask>)> {
    if let Some(m) = mask {
        if (m.height(), m.width()) != (img.height(), img.width()) {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs image {}x{}",
                m.height(),
                m.width(),
                img.height(),
                img.width()
            )));
        }
    }
    let mut cur = (img.clone(), mask.cloned());
    if ops.hflip && rng.random_bool(0.5) {
        cur = hflip(&cur.0, cur.1.as_ref());
    }
    if let Some(max_deg) = ops.rotate.filter(|d| *d > 0.0) {
        let deg = rng.random_range(-max_deg..=max_deg);
        cur = rotate(&cur.0, cur.1.as_ref(), deg);
    }
    if let Some(min_scale) = ops.random_crop.filter(|s| *s > 0.0 && *s < 1.0) {
        let (h, w, _) = cur.0.shape();
        let scale = rng.random_range(min_scale..=1.0);
        let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
        let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        cur = random_crop(&cur.0, cur.1.as_ref(), top, left, ch, cw);
    }
    if let Some(frac) = ops.perspective.filter(|f| *f > 0.0) {
        let (h, w, _) = cur.0.shape();
        let (my, mx) = (frac * h as f64, frac * w as f64);
        let mut shift = [(0.0, 0.0); 4];
        for s in shift.iter_mut() {
            *s = (rng.random_range(-my..=my), rng.random_range(-mx..=mx));
        }
        cur = perspective_warp(&cur.0, cur.1.as_ref(), shift);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp() -> ImageArray {
        ImageArray::from_fn(9, 7, 1, |r, c, _| (r * 7 + c) as f64 / 63.0)
    }

    #[test]
    fn double_hflip_is_identity() {
        let img = ramp();
        let (once, _) = hflip(&img, None);
        assert_eq!(hflip(&once, None).0, img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = ramp();
        let mask = BinaryMask::from_fn(9, 7, |r, c| (r + c) % 3 == 0);
        let (out, m) = rotate(&img, Some(&mask), 0.0);
        assert_eq!(out, img);
        assert_eq!(m.unwrap(), mask);
    }

    #[test]
    fn quarter_turn_matches_dihedral() {
        let img = ImageArray::from_fn(7, 7, 1, |r, c, _| (r * 7 + c) as f64 / 49.0);
        let (out, _) = rotate(&img, None, 90.0);
        let exact = img.apply(Dihedral::Rot90);
        for (a, b) in out.data().iter().zip(exact.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hflip_moves_single_pixel() {
        let img = ImageArray::filled(5, 8, 1, 0.0);
        let mut mask = BinaryMask::empty(5, 8);
        mask.set(2, 1, true);
        let (_, m) = hflip(&img, Some(&mask));
        let m = m.unwrap();
        assert!(m.get(2, 8 - 1 - 1));
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn full_crop_is_identity() {
        let img = ramp();
        assert_eq!(random_crop(&img, None, 0, 0, 9, 7).0, img);
    }

    #[test]
    fn zero_perspective_is_identity() {
        let img = ramp();
        let (out, _) = perspective_warp(&img, None, [(0.0, 0.0); 4]);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn masks_stay_binary_and_aligned() {
        let img = ImageArray::from_fn(16, 16, 1, |r, c, _| if (4..9).contains(&r) && (5..11).contains(&c) { 1.0 } else { 0.0 });
        let mask = BinaryMask::from_fn(16, 16, |r, c| (4..9).contains(&r) && (5..11).contains(&c));
        let mut g = rng::from_seed(11);
        let single = [
            GeometricOps { hflip: true, ..GeometricOps::NONE },
            GeometricOps { rotate: Some(30.0), ..GeometricOps::NONE },
            GeometricOps { random_crop: Some(0.7), ..GeometricOps::NONE },
            GeometricOps { perspective: Some(0.1), ..GeometricOps::NONE },
        ];
        for ops in single.iter().cycle().take(40) {
            let (out, m) = geometric_augment(&img, Some(&mask), ops, &mut g).unwrap();
            let m = m.unwrap();
            // every foreground mask pixel lands on a mostly bright image pixel
            for r in 0..16 {
                for c in 0..16 {
                    if m.get(r, c) {
                        assert!(out.get(r, c, 0) > 0.2, "({r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = ramp();
        let mask = BinaryMask::empty(3, 3);
        let mut g = rng::from_seed(0);
        assert!(geometric_augment(&img, Some(&mask), &GeometricOps::NONE, &mut g).is_err());
    }
}
