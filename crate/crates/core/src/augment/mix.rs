//! MixUp, CutMix and the hybrid per-batch strategy that chooses between them.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::image::ImageArray;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    /// Beta parameter for MixUp.
    pub alpha1: f64,
    /// Beta parameter for CutMix.
    pub alpha2: f64,
    /// Probability that a batch is mixed at all.
    pub mix_prob: f64,
    /// Probability that a mixed batch uses CutMix rather than MixUp.
    pub cutmix_share: f64,
    /// Draw one λ (and box) per sample instead of one per batch.
    pub per_sample_lambda: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.4,
            alpha2: 1.0,
            mix_prob: 0.5,
            cutmix_share: 0.5,
            per_sample_lambda: false,
        }
    }
}

impl MixConfig {
    pub fn disabled() -> Self {
        Self {
            mix_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return Err(Error::invalid(format!("alpha1 must be > 0, got {}", self.alpha1)));
        }
        if !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::invalid(format!("alpha2 must be > 0, got {}", self.alpha2)));
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(Error::invalid(format!("mix_prob must be in [0, 1], got {}", self.mix_prob)));
        }
        if !(0.0..=1.0).contains(&self.cutmix_share) {
            return Err(Error::invalid(format!(
                "cutmix_share must be in [0, 1], got {}",
                self.cutmix_share
            )));
        }
        Ok(())
    }
}

/// λ ~ Beta(α, α).
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("Beta parameter must be > 0, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

fn check_pair(xi: &ImageArray, yi: &[f64], xj: &ImageArray, yj: &[f64]) -> Result<()> {
    if !xi.same_shape(xj) {
        return Err(Error::ShapeMismatch(format!(
            "cannot mix {:?} with {:?}",
            xi.shape(),
            xj.shape()
        )));
    }
    if yi.len() != yj.len() {
        return Err(Error::ShapeMismatch(format!(
            "label lengths differ: {} vs {}",
            yi.len(),
            yj.len()
        )));
    }
    Ok(())
}

fn blend_labels(yi: &[f64], yj: &[f64], lambda: f64) -> Vec<f64> {
    yi.iter()
        .zip(yj)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

/// Pixelwise convex combination `λ·xi + (1−λ)·xj` with the same label mix.
pub fn mixup_pair(
    xi: &ImageArray,
    yi: &[f64],
    xj: &ImageArray,
    yj: &[f64],
    lambda: f64,
) -> Result<(ImageArray, Vec<f64>)> {
    check_pair(xi, yi, xj, yj)?;
    if lambda == 1.0 {
        return Ok((xi.clone(), yi.to_vec()));
    }
    let data = xi
        .data()
        .iter()
        .zip(xj.data())
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok((xi.with_data(data), blend_labels(yi, yj, lambda)))
}

/// CutMix box: center `(rx, ry)` and size `(rw, rh)` in pixels, before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub rx: f64,
    pub ry: f64,
    pub rw: f64,
    pub rh: f64,
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)` inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl PixelBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    #[inline]
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.y0 && r < self.y1 && c >= self.x0 && c < self.x1
    }
}

impl BBox {
    pub fn unclipped_area(&self) -> f64 {
        self.rw * self.rh
    }

    /// Rounds the edges to pixel boundaries and clips to a `width × height` image.
    pub fn clip(&self, width: usize, height: usize) -> PixelBox {
        let edge = |v: f64, max: usize| v.round().clamp(0.0, max as f64) as usize;
        PixelBox {
            y0: edge(self.ry - self.rh / 2.0, height),
            y1: edge(self.ry + self.rh / 2.0, height),
            x0: edge(self.rx - self.rw / 2.0, width),
            x1: edge(self.rx + self.rw / 2.0, width),
        }
    }
}

/// `rx ~ U(0, W)`, `ry ~ U(0, H)`, `rw = W·sqrt(1−λ)`, `rh = H·sqrt(1−λ)`.
pub fn cutmix_box(width: usize, height: usize, lambda: f64, rng: &mut Rng) -> BBox {
    let cut = (1.0 - lambda.clamp(0.0, 1.0)).sqrt();
    BBox {
        rx: rng.random::<f64>() * width as f64,
        ry: rng.random::<f64>() * height as f64,
        rw: width as f64 * cut,
        rh: height as f64 * cut,
    }
}

/// Pastes `xj` into `xi` inside `pbox`. Returns the mixed image, the label mixed
/// with the area-adjusted weight, and that weight `1 − area / (W·H)`.
pub fn cutmix_with_box(
    xi: &ImageArray,
    yi: &[f64],
    xj: &ImageArray,
    yj: &[f64],
    pbox: PixelBox,
) -> Result<(ImageArray, Vec<f64>, f64)> {
    check_pair(xi, yi, xj, yj)?;
    let (h, w, ch) = xi.shape();
    if pbox.y1 > h || pbox.x1 > w || pbox.y0 > pbox.y1 || pbox.x0 > pbox.x1 {
        return Err(Error::invalid(format!("box {pbox:?} outside {h}x{w} image")));
    }
    let mut data = xi.data().to_vec();
    for r in pbox.y0..pbox.y1 {
        let start = (r * w + pbox.x0) * ch;
        let end = (r * w + pbox.x1) * ch;
        data[start..end].copy_from_slice(&xj.data()[start..end]);
    }
    let lambda_adj = 1.0 - pbox.area() as f64 / (h * w) as f64;
    let labels = if pbox.area() == 0 {
        yi.to_vec()
    } else {
        blend_labels(yi, yj, lambda_adj)
    };
    Ok((xi.with_data(data), labels, lambda_adj))
}

pub fn cutmix_pair(
    xi: &ImageArray,
    yi: &[f64],
    xj: &ImageArray,
    yj: &[f64],
    lambda: f64,
    rng: &mut Rng,
) -> Result<(ImageArray, Vec<f64>, f64)> {
    check_pair(xi, yi, xj, yj)?;
    let pbox = cutmix_box(xi.width(), xi.height(), lambda, rng).clip(xi.width(), xi.height());
    cutmix_with_box(xi, yi, xj, yj, pbox)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    None,
    MixUp,
    CutMix,
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixMode::None => "none",
            MixMode::MixUp => "mixup",
            MixMode::CutMix => "cutmix",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub images: Vec<ImageArray>,
    pub soft_labels: Vec<Vec<f64>>,
    /// Batch λ; for CutMix the area-adjusted value, for per-sample mixing the mean.
    pub lambda_used: f64,
    /// Effective λ per sample.
    pub lambdas: Vec<f64>,
    pub mode: MixMode,
    /// Partner index of each sample (itself when unmixed).
    pub partners: Vec<usize>,
    /// Set when mixing was requested but could not happen.
    pub warning: Option<String>,
}

impl MixedBatch {
    fn unmixed(images: &[ImageArray], labels: &[Vec<f64>], warning: Option<String>) -> Self {
        Self {
            images: images.to_vec(),
            soft_labels: labels.to_vec(),
            lambda_used: 1.0,
            lambdas: vec![1.0; images.len()],
            mode: MixMode::None,
            partners: (0..images.len()).collect(),
            warning,
        }
    }
}

/// Uniform permutation without fixed points (rejection sampling; ~e tries).
fn derangement(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Hybrid MixUp/CutMix over one batch.
///
/// With probability `1 − mix_prob` the batch passes through unchanged. Otherwise
/// CutMix is chosen with probability `cutmix_share` (MixUp otherwise), every
/// sample is paired with another sample of the batch, and one λ is drawn for the
/// whole batch unless `per_sample_lambda` is set.
pub fn hybrid_mix(
    images: &[ImageArray],
    labels: &[Vec<f64>],
    cfg: &MixConfig,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::invalid("cannot mix an empty batch"));
    }
    let mixed = rng.random::<f64>() < cfg.mix_prob;
    if !mixed {
        return Ok(MixedBatch::unmixed(images, labels, None));
    }
    if images.len() < 2 {
        return Ok(MixedBatch::unmixed(
            images,
            labels,
            Some("batch of size 1 cannot be mixed".into()),
        ));
    }
    let mode = if rng.random::<f64>() < cfg.cutmix_share {
        MixMode::CutMix
    } else {
        MixMode::MixUp
    };
    let alpha = match mode {
        MixMode::CutMix => cfg.alpha2,
        _ => cfg.alpha1,
    };
    let partners = derangement(images.len(), rng);
    let (h, w) = (images[0].height(), images[0].width());

    let batch_lambda = sample_lambda(alpha, rng)?;
    let batch_box = (mode == MixMode::CutMix).then(|| cutmix_box(w, h, batch_lambda, rng).clip(w, h));

    let mut out_images = Vec::with_capacity(images.len());
    let mut out_labels = Vec::with_capacity(images.len());
    let mut lambdas = Vec::with_capacity(images.len());
    for (i, &j) in partners.iter().enumerate() {
        let lambda = if cfg.per_sample_lambda && i > 0 {
            sample_lambda(alpha, rng)?
        } else {
            batch_lambda
        };
        match mode {
            MixMode::MixUp => {
                let (x, y) = mixup_pair(&images[i], &labels[i], &images[j], &labels[j], lambda)?;
                out_images.push(x);
                out_labels.push(y);
                lambdas.push(lambda);
            }
            MixMode::CutMix => {
                let pbox = if cfg.per_sample_lambda && i > 0 {
                    cutmix_box(w, h, lambda, rng).clip(w, h)
                } else {
                    batch_box.expect("box drawn for cutmix")
                };
                let (x, y, adj) =
                    cutmix_with_box(&images[i], &labels[i], &images[j], &labels[j], pbox)?;
                out_images.push(x);
                out_labels.push(y);
                lambdas.push(adj);
            }
            MixMode::None => unreachable!(),
        }
    }
    let lambda_used = if cfg.per_sample_lambda {
        lambdas.iter().sum::<f64>() / lambdas.len() as f64
    } else {
        lambdas[0]
    };
    Ok(MixedBatch {
        images: out_images,
        soft_labels: out_labels,
        lambda_used,
        lambdas,
        mode,
        partners,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn lambda_one_is_identity() {
        let xi = ImageArray::filled(3, 3, 1, 0.2);
        let xj = ImageArray::filled(3, 3, 1, 0.8);
        let (x, y) = mixup_pair(&xi, &one_hot(0, 3), &xj, &one_hot(2, 3), 1.0).unwrap();
        assert_eq!(x, xi);
        assert_eq!(y, one_hot(0, 3));
    }

    #[test]
    fn half_mix_of_labels() {
        let x = ImageArray::filled(2, 2, 1, 0.5);
        let (_, y) = mixup_pair(&x, &one_hot(0, 3), &x, &one_hot(2, 3), 0.5).unwrap();
        assert_eq!(y, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn scalar_mix() {
        let xi = ImageArray::filled(4, 4, 3, 0.2);
        let xj = ImageArray::filled(4, 4, 3, 0.8);
        let (x, _) = mixup_pair(&xi, &[1.0], &xj, &[1.0], 0.25).unwrap();
        assert!(x.data().iter().all(|&v| (v - 0.65).abs() < 1e-12));
    }

    #[test]
    fn mixing_self_is_identity() {
        let x = ImageArray::from_fn(3, 4, 1, |r, c, _| (r + c) as f64 / 10.0);
        let y = vec![0.2, 0.8];
        for lambda in [0.0, 0.3, 0.77, 1.0] {
            let (x2, y2) = mixup_pair(&x, &y, &x, &y, lambda).unwrap();
            for (a, b) in x2.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-15);
            }
            for (a, b) in y2.iter().zip(&y) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_shapes() {
        let a = ImageArray::filled(2, 2, 1, 0.0);
        let b = ImageArray::filled(2, 3, 1, 0.0);
        assert!(mixup_pair(&a, &[1.0], &b, &[1.0], 0.5).is_err());
        let mut g = rng::from_seed(0);
        assert!(cutmix_pair(&a, &[1.0], &b, &[1.0], 0.5, &mut g).is_err());
    }

    #[test]
    fn box_boundaries() {
        let mut g = rng::from_seed(3);
        let b = cutmix_box(32, 16, 1.0, &mut g);
        assert_eq!((b.rw, b.rh), (0.0, 0.0));
        assert_eq!(b.clip(32, 16).area(), 0);
        let b = cutmix_box(32, 16, 0.0, &mut g);
        assert_eq!((b.rw, b.rh), (32.0, 16.0));
        assert!(b.clip(32, 16).area() <= 32 * 16);
        let b = cutmix_box(40, 40, 0.64, &mut g);
        assert!((b.unclipped_area() - 40.0 * 40.0 * 0.36).abs() < 1e-9);
    }

    #[test]
    fn cutmix_empty_and_full_boxes() {
        let xi = ImageArray::filled(4, 4, 1, 0.0);
        let xj = ImageArray::filled(4, 4, 1, 1.0);
        let (yi, yj) = (one_hot(0, 3), one_hot(1, 3));
        let mut g = rng::from_seed(1);
        let (x, y, adj) = cutmix_pair(&xi, &yi, &xj, &yj, 1.0, &mut g).unwrap();
        assert_eq!((x, y, adj), (xi.clone(), yi.clone(), 1.0));

        let full = PixelBox { y0: 0, y1: 4, x0: 0, x1: 4 };
        let (x, y, adj) = cutmix_with_box(&xi, &yi, &xj, &yj, full).unwrap();
        assert_eq!((x, y, adj), (xj.clone(), yj.clone(), 0.0));
    }

    #[test]
    fn cutmix_quarter_box_by_hand() {
        let xi = ImageArray::filled(4, 4, 1, 0.0);
        let xj = ImageArray::filled(4, 4, 1, 1.0);
        let pbox = PixelBox { y0: 0, y1: 2, x0: 0, x1: 2 };
        let (x, y, adj) = cutmix_with_box(&xi, &one_hot(0, 3), &xj, &one_hot(2, 3), pbox).unwrap();
        assert_eq!(adj, 0.75);
        assert_eq!(y, vec![0.75, 0.0, 0.25]);
        assert_eq!(x.data().iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(x.get(1, 1, 0), 1.0);
        assert_eq!(x.get(2, 2, 0), 0.0);
    }

    fn batch(n: usize) -> (Vec<ImageArray>, Vec<Vec<f64>>) {
        let imgs = (0..n)
            .map(|i| ImageArray::filled(8, 8, 1, i as f64 / n as f64))
            .collect();
        let labels = (0..n).map(|i| one_hot(i % 3, 3)).collect();
        (imgs, labels)
    }

    #[test]
    fn never_mixes_at_zero_probability() {
        let (imgs, labels) = batch(4);
        let mut g = rng::from_seed(5);
        for _ in 0..100 {
            let mb = hybrid_mix(&imgs, &labels, &MixConfig::disabled(), &mut g).unwrap();
            assert_eq!(mb.mode, MixMode::None);
            assert_eq!(mb.images, imgs);
            assert_eq!(mb.soft_labels, labels);
        }
    }

    #[test]
    fn always_mixup_when_forced() {
        let (imgs, labels) = batch(4);
        let cfg = MixConfig {
            mix_prob: 1.0,
            cutmix_share: 0.0,
            ..MixConfig::default()
        };
        let mut g = rng::from_seed(6);
        for _ in 0..1000 {
            let mb = hybrid_mix(&imgs, &labels, &cfg, &mut g).unwrap();
            assert_eq!(mb.mode, MixMode::MixUp);
            assert!(mb.partners.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn single_sample_batch_warns() {
        let (imgs, labels) = batch(1);
        let cfg = MixConfig {
            mix_prob: 1.0,
            ..MixConfig::default()
        };
        let mut g = rng::from_seed(6);
        let mb = hybrid_mix(&imgs, &labels, &cfg, &mut g).unwrap();
        assert_eq!(mb.mode, MixMode::None);
        assert!(mb.warning.is_some());
    }

    #[test]
    fn per_sample_lambda_varies() {
        let (imgs, labels) = batch(6);
        let cfg = MixConfig {
            mix_prob: 1.0,
            cutmix_share: 0.0,
            per_sample_lambda: true,
            ..MixConfig::default()
        };
        let mut g = rng::from_seed(8);
        let mb = hybrid_mix(&imgs, &labels, &cfg, &mut g).unwrap();
        assert!(mb.lambdas.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn invalid_alpha() {
        let mut g = rng::from_seed(0);
        assert!(sample_lambda(0.0, &mut g).is_err());
        assert!(sample_lambda(-1.0, &mut g).is_err());
        assert!(MixConfig { mix_prob: 1.5, ..MixConfig::default() }.validate().is_err());
    }
}
