//! Architecture registry, model handles and checkpoint files.
//!
//! Native entries (`tiny_cnn`, `tiny_unet`, `unet`, `unetplusplus`) are built on
//! [`crate::nn`]. The large classification backbones are listed so configs can
//! name them, but building one needs a factory supplied through
//! [`Registry::register`]; without it [`Error::BackendUnavailable`] is returned.
//!
//! Every handle honours one output contract: classification yields a
//! probability vector (softmax), segmentation a per-pixel probability map
//! (sigmoid) at the input image's resolution.

mod checkpoint;
mod native;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use checkpoint::{
    adapt_pretrained, decode_weights, encode_weights, load_model, load_record, parse_meta,
    save_checkpoint, sha256_hex, AdaptReport, CheckpointInfo, CheckpointRecord, TensorRecord,
    BIN_FILE, MAGIC, META_FILE,
};

use crate::error::{Error, Result};
use crate::image::{ImageArray, ProbMask};
use crate::nn::{ParamGrads, ParamStore};
use crate::objectives::{sigmoid, softmax};
use crate::rng::{self, Rng};
use native::{NativeArch, NativeNet};

/// Input sides used by the full-size architectures.
/// Pixel values enter networks as `(v - INPUT_MEAN) / INPUT_STD`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

pub const STANDARD_SIZES: [usize; 4] = [224, 384, 512, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Segmentation,
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Segmentation => "segmentation",
            Task::Classification => "classification",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "segmentation" | "seg" => Ok(Task::Segmentation),
            "classification" | "cls" => Ok(Task::Classification),
            other => Err(Error::invalid(format!(
                "unknown task `{other}` (expected seg or cls)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PretrainSource {
    Imagenet,
    ExternalCheckpoint,
    None,
}

impl fmt::Display for PretrainSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PretrainSource::Imagenet => "imagenet",
            PretrainSource::ExternalCheckpoint => "external_checkpoint",
            PretrainSource::None => "none",
        })
    }
}

impl FromStr for PretrainSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "imagenet" => Ok(PretrainSource::Imagenet),
            "external_checkpoint" | "external" => Ok(PretrainSource::ExternalCheckpoint),
            "none" | "" => Ok(PretrainSource::None),
            other => Err(Error::invalid(format!(
                "unknown pretrain source `{other}` (expected imagenet, external_checkpoint or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub task: Task,
    pub arch: String,
    pub encoder: Option<String>,
    /// 1 for a lesion mask, K for K classes.
    pub num_outputs: usize,
    pub input_size: usize,
    pub pretrain_source: PretrainSource,
    pub in_channels: usize,
}

impl ModelSpec {
    /// Spec with the registry's default input size for `arch`.
    pub fn new(task: Task, arch: &str, num_outputs: usize) -> Result<Self> {
        let registry = Registry::default();
        let key = registry.resolve(arch)?;
        Ok(Self {
            task,
            input_size: registry.entries[&key].default_input,
            arch: key,
            encoder: None,
            num_outputs,
            pretrain_source: PretrainSource::None,
            in_channels: 3,
        })
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }
}

/// A trainable or frozen network operating on one C×H×W sample.
pub trait Network: Send + Sync {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Parameter groups that belong to the task head.
    fn head_groups(&self) -> Vec<String>;

    /// Raw scores: K logits, or H·W logits for a mask.
    fn logits(&self, input: &[f64], shape: [usize; 3]) -> Result<Vec<f64>>;

    /// Forward pass, then back-propagation of `grad_of(logits)` into `grads`.
    fn logits_with_grad(
        &self,
        _input: &[f64],
        _shape: [usize; 3],
        _grad_of: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        _grads: &mut ParamGrads,
    ) -> Result<Vec<f64>> {
        Err(Error::invalid("this backend does not support training"))
    }

    fn trainable(&self) -> bool {
        true
    }
}

pub type Factory = Arc<dyn Fn(&ModelSpec, &mut Rng) -> Result<Box<dyn Network>> + Send + Sync>;

#[derive(Clone)]
enum Backend {
    Native(NativeArch),
    External(Option<Factory>),
}

#[derive(Clone)]
struct Entry {
    task: Task,
    default_input: usize,
    backend: Backend,
}

/// Maps architecture keys to builders.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

const ALIASES: [(&str, &str); 3] = [
    ("unet++", "unetplusplus"),
    ("inception_res_v2", "inception_resnet_v2"),
    ("vit_small", "vit_s"),
];

impl Default for Registry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        let mut native = |key: &str, task, default_input, arch| {
            entries.insert(
                key.to_string(),
                Entry {
                    task,
                    default_input,
                    backend: Backend::Native(arch),
                },
            );
        };
        native("tiny_cnn", Task::Classification, 64, NativeArch::TinyCnn);
        native("tiny_unet", Task::Segmentation, 64, NativeArch::UNet { base: 8, depth: 2 });
        native("unet", Task::Segmentation, 1024, NativeArch::UNet { base: 8, depth: 4 });
        native(
            "unetplusplus",
            Task::Segmentation,
            1024,
            NativeArch::UNetPlusPlus { base: 8, depth: 3 },
        );
        for (key, size) in [
            ("inception_v3", 512),
            ("inception_resnet_v2", 512),
            ("se_resnext101", 224),
            ("resnest50", 512),
            ("efficientnet_b6", 512),
            ("vit_t", 384),
            ("vit_s", 384),
        ] {
            entries.insert(
                key.to_string(),
                Entry {
                    task: Task::Classification,
                    default_input: size,
                    backend: Backend::External(None),
                },
            );
        }
        Self { entries }
    }
}

impl Registry {
    pub fn keys(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Canonical key for `arch`, following aliases.
    pub fn resolve(&self, arch: &str) -> Result<String> {
        let key = arch.trim().to_ascii_lowercase();
        let key = ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .map(|(_, k)| k.to_string())
            .unwrap_or(key);
        if self.entries.contains_key(&key) {
            Ok(key)
        } else {
            Err(Error::UnknownArch {
                key: arch.to_string(),
                registered: self.keys(),
            })
        }
    }

    /// Installs (or replaces) an externally provided backbone.
    pub fn register(&mut self, key: &str, task: Task, default_input: usize, factory: Factory) {
        self.entries.insert(
            key.to_ascii_lowercase(),
            Entry {
                task,
                default_input,
                backend: Backend::External(Some(factory)),
            },
        );
    }

    pub fn is_native(&self, arch: &str) -> bool {
        self.resolve(arch)
            .map(|k| matches!(self.entries[&k].backend, Backend::Native(_)))
            .unwrap_or(false)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let key = self.resolve(&spec.arch)?;
        let entry = &self.entries[&key];
        if entry.task != spec.task {
            return Err(Error::invalid(format!(
                "`{key}` is a {} architecture, not {}",
                entry.task, spec.task
            )));
        }
        if spec.in_channels != 1 && spec.in_channels != 3 {
            return Err(Error::invalid(format!("in_channels must be 1 or 3, got {}", spec.in_channels)));
        }
        match spec.task {
            Task::Segmentation if spec.num_outputs != 1 => {
                return Err(Error::invalid(format!(
                    "segmentation models have one output per lesion model, got {}",
                    spec.num_outputs
                )))
            }
            Task::Classification if spec.num_outputs < 2 => {
                return Err(Error::invalid(format!(
                    "classification needs at least 2 classes, got {}",
                    spec.num_outputs
                )))
            }
            _ => {}
        }
        let size = spec.input_size;
        match entry.backend {
            Backend::Native(arch) => {
                let f = arch.size_factor();
                if size == 0 || size % f != 0 {
                    return Err(Error::invalid(format!(
                        "`{key}` needs an input size that is a positive multiple of {f}, got {size}"
                    )));
                }
                if !key.starts_with("tiny_") && !STANDARD_SIZES.contains(&size) {
                    return Err(Error::invalid(format!(
                        "`{key}` input size must be one of {STANDARD_SIZES:?}, got {size}"
                    )));
                }
            }
            Backend::External(_) => {
                if !STANDARD_SIZES.contains(&size) {
                    return Err(Error::invalid(format!(
                        "`{key}` input size must be one of {STANDARD_SIZES:?}, got {size}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds `spec` with weights drawn from `init_seed`.
    pub fn build(&self, spec: &ModelSpec, init_seed: u64) -> Result<Model> {
        self.validate(spec)?;
        let key = self.resolve(&spec.arch)?;
        let mut spec = spec.clone();
        spec.arch = key.clone();
        let mut r = rng::substream(init_seed, rng::INIT);
        let net: Box<dyn Network> = match &self.entries[&key].backend {
            Backend::Native(arch) => Box::new(NativeNet::new(*arch, spec.in_channels, spec.num_outputs, &mut r)),
            Backend::External(Some(factory)) => factory(&spec, &mut r)?,
            Backend::External(None) => {
                return Err(Error::BackendUnavailable {
                    key,
                    hint: "register a factory for it with Registry::register".into(),
                })
            }
        };
        Ok(Model { spec, net })
    }
}

/// Builds `spec` from the default registry with init seed 0.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    Registry::default().build(spec, 0)
}

pub struct Model {
    spec: ModelSpec,
    net: Box<dyn Network>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("params", &self.net.params().scalar_count())
            .finish()
    }
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.net.params_mut()
    }

    pub fn head_groups(&self) -> Vec<String> {
        self.net.head_groups()
    }

    pub fn trainable(&self) -> bool {
        self.net.trainable()
    }

    /// Channel-adapts, resizes and centers `img` for the model, returning C×H×W data.
    pub fn prepare(&self, img: &ImageArray) -> (Vec<f64>, [usize; 3]) {
        let size = self.spec.input_size;
        let resized;
        let img = if img.height() != size || img.width() != size {
            resized = img.resize(size, size);
            &resized
        } else {
            img
        };
        let c = self.spec.in_channels;
        let plane = size * size;
        let chw: Vec<f64> = img.to_chw().into_iter().map(|v| (v - INPUT_MEAN) / INPUT_STD).collect();
        let data = match (img.channels(), c) {
            (a, b) if a == b => chw,
            (1, 3) => chw.iter().chain(&chw).chain(&chw).copied().collect(),
            (3, 1) => (0..plane)
                .map(|i| (chw[i] + chw[plane + i] + chw[2 * plane + i]) / 3.0)
                .collect(),
            _ => unreachable!("channels are 1 or 3"),
        };
        (data, [c, size, size])
    }

    pub fn logits(&self, input: &[f64], shape: [usize; 3]) -> Result<Vec<f64>> {
        let out = self.net.logits(input, shape)?;
        self.check_output(&out, shape)?;
        Ok(out)
    }

    pub fn logits_with_grad(
        &self,
        input: &[f64],
        shape: [usize; 3],
        grad_of: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grads: &mut ParamGrads,
    ) -> Result<Vec<f64>> {
        self.net.logits_with_grad(input, shape, grad_of, grads)
    }

    fn check_output(&self, out: &[f64], shape: [usize; 3]) -> Result<()> {
        let expected = match self.spec.task {
            Task::Classification => self.spec.num_outputs,
            Task::Segmentation => shape[1] * shape[2],
        };
        if out.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "backend produced {} outputs, expected {expected}",
                out.len()
            )));
        }
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn predict_proba(&self, img: &ImageArray) -> Result<Vec<f64>> {
        self.require(Task::Classification)?;
        let (x, shape) = self.prepare(img);
        Ok(softmax(&self.logits(&x, shape)?))
    }

    /// Foreground probabilities at `img`'s resolution.
    pub fn predict_mask(&self, img: &ImageArray) -> Result<ProbMask> {
        self.require(Task::Segmentation)?;
        let (x, shape) = self.prepare(img);
        let probs: Vec<f64> = self.logits(&x, shape)?.into_iter().map(sigmoid).collect();
        let size = self.spec.input_size;
        if img.height() == size && img.width() == size {
            return ProbMask::new(size, size, probs);
        }
        let map = ImageArray::new(size, size, 1, probs)?.resize(img.height(), img.width());
        ProbMask::new(
            img.height(),
            img.width(),
            map.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    fn require(&self, task: Task) -> Result<()> {
        if self.spec.task != task {
            return Err(Error::invalid(format!(
                "`{}` is a {} model",
                self.spec.arch, self.spec.task
            )));
        }
        Ok(())
    }
}
