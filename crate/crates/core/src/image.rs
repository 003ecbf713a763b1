//! Image, probability-map and mask containers plus PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// H×W×C floating image with values in `[0, 1]`, stored row-major, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageArray {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("channel count must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled image with valid shape")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn produced a valid image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Rebuild with the same shape from transformed values. Values are clamped to `[0, 1]`.
    pub fn map_clamped(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }

    /// Planar copy (C×H×W) used as network input.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn apply(&self, op: Dihedral) -> Self {
        let (data, h, w) = op.apply_grid(&self.data, self.height, self.width, self.channels);
        Self {
            height: h,
            width: w,
            channels: self.channels,
            data,
        }
    }

    pub fn hflip(&self) -> Self {
        self.apply(Dihedral::HFlip)
    }

    pub fn vflip(&self) -> Self {
        self.apply(Dihedral::VFlip)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Self::from_fn(height, width, self.channels, |r, c, ch| {
            let y = ((r as f64 + 0.5) * sy - 0.5).max(0.0);
            let x = ((c as f64 + 0.5) * sx - 0.5).max(0.0);
            self.sample_bilinear(y, x, ch)
        })
    }

    /// Bilinear sample at fractional coordinates; outside the image reads as 0.
    pub fn sample_bilinear(&self, y: f64, x: f64, ch: usize) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let at = |r: f64, c: f64| -> f64 {
            if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
                0.0
            } else {
                self.get(r as usize, c as usize, ch)
            }
        };
        if fy == 0.0 && fx == 0.0 {
            return at(y0, x0);
        }
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
        let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn decode_png(bytes: &[u8]) -> std::result::Result<Self, String> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| e.to_string())?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes).map_err(|msg| Error::Image {
            path: path.to_path_buf(),
            msg,
        })
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
                let g = img.to_luma8();
                let data = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Self::new(h, w, 1, data).expect("decoded gray image")
            }
            _ => {
                let rgb = img.to_rgb8();
                let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Self::new(h, w, 3, data).expect("decoded rgb image")
            }
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let dynimg = if self.channels == 1 {
            DynamicImage::ImageLuma8(
                GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("gray buffer size"),
            )
        } else {
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("rgb buffer size"),
            )
        };
        encode(&dynimg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

fn encode(img: &DynamicImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory");
    buf.into_inner()
}

/// Per-pixel foreground probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} probability map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid("probabilities must be finite and in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, p: f64) -> Self {
        Self::new(height, width, vec![p; height * width]).expect("valid filled map")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.values.iter().map(|&p| p >= threshold).collect(),
        }
    }

    pub fn apply(&self, op: Dihedral) -> Self {
        let (values, height, width) = op.apply_grid(&self.values, self.height, self.width, 1);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn apply_inverse(&self, op: Dihedral) -> Self {
        let (values, height, width) =
            op.apply_inverse_grid(&self.values, self.height, self.width, 1);
        Self {
            height,
            width,
            values,
        }
    }
}

impl From<&BinaryMask> for ProbMask {
    fn from(m: &BinaryMask) -> Self {
        Self {
            height: m.height,
            width: m.width,
            values: m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Binary lesion mask. Any nonzero pixel in a mask file is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn apply(&self, op: Dihedral) -> Self {
        let (data, height, width) = op.apply_grid(&self.data, self.height, self.width, 1);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn decode_png(bytes: &[u8]) -> std::result::Result<Self, String> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| e.to_string())?;
        let g = img.to_luma8();
        Ok(Self {
            height: g.height() as usize,
            width: g.width() as usize,
            data: g.as_raw().iter().map(|&v| v != 0).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes).map_err(|msg| Error::Image {
            path: path.to_path_buf(),
            msg,
        })
    }

    /// 8-bit single channel PNG with values {0, 255}.
    pub fn encode_png(&self) -> Vec<u8> {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let g = GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("mask buffer size");
        encode(&DynamicImage::ImageLuma8(g))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

/// Elements of the dihedral group of the square, used for flips, right-angle
/// rotations and test-time augmentation.
///
/// Composite variants apply the rotation first: `HFlipRot90` is `hflip(rot90(x))`.
/// Rotations are counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    HFlip,
    VFlip,
    Rot180,
    Rot90,
    Rot270,
    HFlipRot90,
    HFlipRot270,
}

impl Dihedral {
    pub fn inverse(self) -> Self {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            // Reflections are involutions.
            other => other,
        }
    }

    pub fn swaps_axes(self) -> bool {
        matches!(
            self,
            Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::HFlipRot90 | Dihedral::HFlipRot270
        )
    }

    /// Source pixel for output pixel `(r, c)` given the *input* dimensions.
    fn source(self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (r, c),
            Dihedral::HFlip => (r, w - 1 - c),
            Dihedral::VFlip => (h - 1 - r, c),
            Dihedral::Rot180 => (h - 1 - r, w - 1 - c),
            // output is w×h
            Dihedral::Rot90 => (c, w - 1 - r),
            Dihedral::Rot270 => (h - 1 - c, r),
            // hflip(rot90): output col c reads rot90 col (h-1-c)
            Dihedral::HFlipRot90 => (h - 1 - c, w - 1 - r),
            Dihedral::HFlipRot270 => (c, r),
        }
    }

    pub(crate) fn apply_grid<T: Copy>(
        self,
        data: &[T],
        h: usize,
        w: usize,
        ch: usize,
    ) -> (Vec<T>, usize, usize) {
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(data.len());
        for r in 0..oh {
            for c in 0..ow {
                let (sr, sc) = self.source(r, c, h, w);
                let base = (sr * w + sc) * ch;
                out.extend_from_slice(&data[base..base + ch]);
            }
        }
        (out, oh, ow)
    }

    pub(crate) fn apply_inverse_grid<T: Copy>(
        self,
        data: &[T],
        h: usize,
        w: usize,
        ch: usize,
    ) -> (Vec<T>, usize, usize) {
        self.inverse().apply_grid(data, h, w, ch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::HFlip,
        Dihedral::VFlip,
        Dihedral::Rot180,
        Dihedral::Rot90,
        Dihedral::Rot270,
        Dihedral::HFlipRot90,
        Dihedral::HFlipRot270,
    ];

    fn ramp(h: usize, w: usize) -> ImageArray {
        ImageArray::from_fn(h, w, 1, |r, c, _| (r * w + c) as f64 / (h * w) as f64)
    }

    #[test]
    fn every_transform_is_inverted() {
        let img = ramp(3, 5);
        for op in ALL {
            let back = img.apply(op).apply(op.inverse());
            assert_eq!(back, img, "{op:?}");
        }
    }

    #[test]
    fn composites_match_their_definition() {
        let img = ramp(4, 6);
        assert_eq!(
            img.apply(Dihedral::HFlipRot90),
            img.apply(Dihedral::Rot90).apply(Dihedral::HFlip)
        );
        assert_eq!(
            img.apply(Dihedral::HFlipRot270),
            img.apply(Dihedral::Rot270).apply(Dihedral::HFlip)
        );
        assert_eq!(
            img.apply(Dihedral::Rot180),
            img.apply(Dihedral::Rot90).apply(Dihedral::Rot90)
        );
    }

    #[test]
    fn rot90_is_counter_clockwise() {
        // top-right corner moves to top-left
        let img = ramp(2, 3);
        let r = img.apply(Dihedral::Rot90);
        assert_eq!(r.shape(), (3, 2, 1));
        assert_eq!(r.get(0, 0, 0), img.get(0, 2, 0));
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let img = ImageArray::from_fn(5, 7, 3, |r, c, ch| ((r * 31 + c * 7 + ch) % 256) as f64 / 255.0);
        let back = ImageArray::decode_png(&img.encode_png()).unwrap();
        assert_eq!(back, img);

        let mut m = BinaryMask::empty(4, 4);
        m.set(1, 2, true);
        assert_eq!(BinaryMask::decode_png(&m.encode_png()).unwrap(), m);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(8, 8);
        assert_eq!(img.resize(8, 8), img);
        let flat = ImageArray::filled(10, 10, 3, 0.25);
        let small = flat.resize(5, 5);
        assert!(small.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageArray::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageArray::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageArray::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ProbMask::new(1, 1, vec![1.5]).is_err());
    }
}
