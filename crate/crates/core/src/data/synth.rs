//! Synthetic OCTA-like corpus.
//!
//! Each image is a textured gray background with lesion blobs and `label + 1`
//! bright circular markers. Labels are assigned round-robin (`i % class_count`),
//! so the class of every image is recoverable by counting markers. Lesion masks
//! are exactly the pixels a lesion blob still owns after all drawing.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::{load_cls_manifest, load_seg_manifest, ClsManifest, Lesion, SegManifest};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageArray};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub image_size: usize,
    pub class_count: usize,
    /// Inclusive range for the number of blobs of each lesion type per image.
    pub lesion_blob_count_range: (usize, usize),
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 60,
            image_size: 64,
            class_count: 3,
            lesion_blob_count_range: (1, 3),
            noise_level: 0.03,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        if self.image_size < 16 {
            return Err(Error::invalid("image_size must be at least 16"));
        }
        if self.class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        let (lo, hi) = self.lesion_blob_count_range;
        if lo > hi {
            return Err(Error::invalid("lesion_blob_count_range must have min <= max"));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::invalid("noise_level must be in [0, 0.5]"));
        }
        Ok(())
    }
}

const MARKER_VALUE: f64 = 0.97;
const IRMA_VALUE: f64 = 0.68;
const NPA_VALUE: f64 = 0.04;
const NV_HIGH: f64 = 0.84;
const NV_LOW: f64 = 0.52;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Owner {
    Background,
    Lesion(Lesion),
    Marker,
}

struct Canvas {
    size: usize,
    value: Vec<f64>,
    owner: Vec<Owner>,
}

impl Canvas {
    fn disk(&mut self, cy: f64, cx: f64, radius: f64, owner: Owner, shade: impl Fn(usize, usize) -> f64) {
        let r2 = radius * radius;
        let lo_r = (cy - radius).floor().max(0.0) as usize;
        let hi_r = ((cy + radius).ceil() as usize).min(self.size - 1);
        let lo_c = (cx - radius).floor().max(0.0) as usize;
        let hi_c = ((cx + radius).ceil() as usize).min(self.size - 1);
        for r in lo_r..=hi_r {
            for c in lo_c..=hi_c {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                if dy * dy + dx * dx <= r2 {
                    let i = r * self.size + c;
                    self.value[i] = shade(r, c);
                    self.owner[i] = owner;
                }
            }
        }
    }
}

/// One rendered sample: image, per-lesion masks and class label.
pub struct SynthSample {
    pub image: ImageArray,
    pub masks: Vec<(Lesion, BinaryMask)>,
    pub label: usize,
}

/// Renders sample `index` of the corpus described by `spec`.
pub fn render_sample(spec: &SynthSpec, index: usize) -> SynthSample {
    let size = spec.image_size;
    let s = size as f64;
    let label = index % spec.class_count;
    let mut rng = rng::substream(spec.seed ^ (index as u64).wrapping_mul(0x9e37_79b9), rng::SYNTH);

    // Background: faint capillary-like interference texture.
    let (p1, p2): (f64, f64) = (rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3);
    let (f1, f2) = (rng.random_range(0.25..0.45), rng.random_range(0.25..0.45));
    let mut canvas = Canvas {
        size,
        value: (0..size * size)
            .map(|i| {
                let (r, c) = ((i / size) as f64, (i % size) as f64);
                0.30 + 0.05 * ((f1 * c + p1).sin() * (f2 * r + p2).cos())
            })
            .collect(),
        owner: vec![Owner::Background; size * size],
    };

    let (lo, hi) = spec.lesion_blob_count_range;
    for lesion in Lesion::ALL {
        let count = if hi == 0 { 0 } else { rng.random_range(lo..=hi) };
        for _ in 0..count {
            let (radius, shade): (f64, Box<dyn Fn(usize, usize) -> f64>) = match lesion {
                Lesion::Irma => (
                    (s / 24.0).max(2.0) * rng.random_range(0.8..1.2),
                    Box::new(|_, _| IRMA_VALUE),
                ),
                Lesion::Npa => (
                    (s / 10.0).max(3.0) * rng.random_range(0.8..1.2),
                    Box::new(|_, _| NPA_VALUE),
                ),
                Lesion::Nv => (
                    (s / 14.0).max(3.0) * rng.random_range(0.8..1.2),
                    Box::new(|r, c| if (r + c) % 2 == 0 { NV_HIGH } else { NV_LOW }),
                ),
            };
            let cy = rng.random_range(radius..s - radius);
            let cx = rng.random_range(radius..s - radius);
            canvas.disk(cy, cx, radius, Owner::Lesion(lesion), shade);
        }
    }

    // Markers are drawn last and never overlap one another.
    let radius = (s / 10.0).max(3.0);
    let mut placed: Vec<(f64, f64)> = Vec::new();
    for _ in 0..=label {
        let mut spot = (s / 2.0, s / 2.0);
        for _ in 0..200 {
            // integer centers give every marker the same pixel footprint
            let cand = (
                rng.random_range(radius + 1.0..s - radius - 1.0).round(),
                rng.random_range(radius + 1.0..s - radius - 1.0).round(),
            );
            let clear = placed.iter().all(|&(y, x)| {
                let (dy, dx) = (y - cand.0, x - cand.1);
                (dy * dy + dx * dx).sqrt() > 2.0 * radius + 2.0
            });
            spot = cand;
            if clear {
                break;
            }
        }
        placed.push(spot);
        canvas.disk(spot.0, spot.1, radius, Owner::Marker, |_, _| MARKER_VALUE);
    }

    if spec.noise_level > 0.0 {
        let normal = Normal::new(0.0, spec.noise_level).expect("valid noise sigma");
        for v in canvas.value.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let gray: Vec<f64> = canvas.value.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let image = ImageArray::from_fn(size, size, 3, |r, c, _| gray[r * size + c]);
    let masks = Lesion::ALL
        .into_iter()
        .map(|lesion| {
            let m = BinaryMask::from_fn(size, size, |r, c| {
                canvas.owner[r * size + c] == Owner::Lesion(lesion)
            });
            (lesion, m)
        })
        .collect();
    SynthSample {
        image,
        masks,
        label,
    }
}

/// Writes the corpus under `out_dir` and returns both manifests.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<(SegManifest, ClsManifest)> {
    spec.validate()?;
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&out_dir.join("images"))?;
    for lesion in Lesion::ALL {
        mkdir(&out_dir.join("masks").join(lesion.as_str()))?;
    }
    let mut labels = String::from("image,label\n");
    for i in 0..spec.n_samples {
        let sample = render_sample(spec, i);
        let name = format!("synth_{i:04}.png");
        sample.image.save(&out_dir.join("images").join(&name))?;
        for (lesion, mask) in &sample.masks {
            mask.save(&out_dir.join("masks").join(lesion.as_str()).join(&name))?;
        }
        labels.push_str(&format!("{name},{}\n", sample.label));
    }
    let labels_path = out_dir.join("labels.csv");
    std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    let seg = load_seg_manifest(out_dir)?;
    let mut cls = load_cls_manifest(out_dir)?;
    cls.class_count = spec.class_count;
    Ok((seg, cls))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthSpec {
        SynthSpec {
            n_samples: n,
            image_size: 32,
            class_count: 3,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn round_robin_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (_, cls) = generate_synthetic(&small(60), dir.path()).unwrap();
        let mut hist = [0; 3];
        for y in cls.labels() {
            hist[y] += 1;
        }
        assert_eq!(hist, [20, 20, 20]);
    }

    #[test]
    fn zero_blobs_give_empty_masks() {
        let spec = SynthSpec {
            lesion_blob_count_range: (0, 0),
            ..small(6)
        };
        for i in 0..6 {
            for (_, m) in render_sample(&spec, i).masks {
                assert_eq!(m.count(), 0);
            }
        }
    }

    #[test]
    fn markers_encode_the_label() {
        let spec = SynthSpec {
            noise_level: 0.0,
            lesion_blob_count_range: (0, 0),
            ..small(9)
        };
        let single = render_sample(&spec, 0)
            .image
            .data()
            .iter()
            .filter(|&&v| v > 0.9)
            .count();
        assert!(single > 0);
        for i in 0..9 {
            let s = render_sample(&spec, i);
            let bright = s.image.data().iter().filter(|&&v| v > 0.9).count();
            // markers never overlap, so bright area scales with marker count
            assert_eq!(bright, single * (s.label + 1), "sample {i}");
        }
    }

    #[test]
    fn masks_mark_exactly_lesion_pixels() {
        let spec = SynthSpec {
            noise_level: 0.0,
            lesion_blob_count_range: (2, 2),
            ..small(3)
        };
        let s = render_sample(&spec, 1);
        let (_, npa) = s.masks.iter().find(|(l, _)| *l == Lesion::Npa).unwrap();
        assert!(npa.count() > 0);
        for r in 0..32 {
            for c in 0..32 {
                if npa.get(r, c) {
                    assert!((s.image.get(r, c, 0) - NPA_VALUE).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(SynthSpec { class_count: 1, ..small(3) }.validate().is_err());
        assert!(SynthSpec { lesion_blob_count_range: (3, 1), ..small(3) }.validate().is_err());
        assert!(SynthSpec { n_samples: 0, ..small(3) }.validate().is_err());
    }
}
