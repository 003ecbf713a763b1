//! Training loops, cross validation and best-checkpoint selection.
//!
//! Each epoch logs `train_loss`, the validation score and the learning rate
//! taken from the schedule. After the last epoch the weights of the best
//! epoch (earliest on ties) are written to `checkpoint.bin`/`checkpoint.meta`
//! next to `log.csv`.
//!
//! All randomness comes from named substreams of the run seed, and samples are
//! processed in a fixed order, so a rerun with the same seed, config and data
//! reproduces the run.

mod cls;
mod seg;

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use cls::{run_cv, train_classifier, CvResult};
pub use seg::{run_segmentation, train_segmentation};

use crate::augment::{GeometricOps, MixConfig, MixMode};
use crate::data::Lesion;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageArray};
use crate::metrics::SelectionMetric;
use crate::model_zoo::{CheckpointRecord, ModelSpec, Task};
use crate::nn::OptimizerKind;
use crate::objectives::DEFAULT_LABEL_SMOOTHING;
use crate::schedules::{ScheduleKind, ScheduleSpec};

pub const LOG_FILE: &str = "log.csv";
pub const MIX_LOG_FILE: &str = "mix_log.csv";
pub const SUMMARY_FILE: &str = "summary.kv";
pub const FOLDS_FILE: &str = "folds.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    Dice,
    Jaccard,
    DiceJaccard,
}

impl LossChoice {
    /// `(w_dice, w_jaccard)`.
    pub fn weights(self) -> (f64, f64) {
        match self {
            LossChoice::Dice => (1.0, 0.0),
            LossChoice::Jaccard => (0.0, 1.0),
            LossChoice::DiceJaccard => (1.0, 1.0),
        }
    }
}

impl fmt::Display for LossChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossChoice::Dice => "dice",
            LossChoice::Jaccard => "jaccard",
            LossChoice::DiceJaccard => "dice+jaccard",
        })
    }
}

impl FromStr for LossChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dice" => Ok(LossChoice::Dice),
            "jaccard" => Ok(LossChoice::Jaccard),
            "dice+jaccard" | "dice&jaccard" => Ok(LossChoice::DiceJaccard),
            other => Err(Error::invalid(format!(
                "unknown loss `{other}` (expected dice, jaccard or dice+jaccard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub color_jitter: bool,
    pub jitter_strength: f64,
    /// Standard deviation of additive noise; 0 disables it.
    pub noise_sigma: f64,
    pub geometric: GeometricOps,
}

impl AugmentConfig {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Segmentation => Self {
                color_jitter: true,
                jitter_strength: 0.2,
                noise_sigma: 0.02,
                geometric: GeometricOps::default(),
            },
            Task::Classification => Self {
                color_jitter: true,
                jitter_strength: 0.2,
                noise_sigma: 0.0,
                geometric: GeometricOps {
                    perspective: None,
                    ..GeometricOps::default()
                },
            },
        }
    }

    pub fn none() -> Self {
        Self {
            color_jitter: false,
            jitter_strength: 0.0,
            noise_sigma: 0.0,
            geometric: GeometricOps::NONE,
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub task: Task,
    pub seed: u64,
    /// Dataset root.
    pub data: PathBuf,
    /// Lesion trained by a segmentation run.
    pub lesion: Option<Lesion>,
    /// Number of cross-validation folds (classification).
    pub folds: usize,
    /// Existing `image,fold` file; otherwise folds are drawn from the seed.
    pub folds_file: Option<PathBuf>,
    pub model: ModelSpec,
    /// Checkpoint whose trunk initializes the model.
    pub pretrained: Option<PathBuf>,
    pub strict_head: bool,
    pub schedule: ScheduleSpec,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub loss: LossChoice,
    pub selection_metric: SelectionMetric,
    /// Validation share of the segmentation split.
    pub val_fraction: f64,
    pub label_smoothing: f64,
    pub mix: MixConfig,
    pub augment: AugmentConfig,
}

impl RunConfig {
    /// Defaults for `task`: Adam at 1e-4 with step decay for segmentation,
    /// SGD at 1e-3 with cosine annealing for classification, 100 epochs each.
    pub fn defaults(task: Task) -> Self {
        let (model, schedule, optimizer, batch_size, metric, mix) = match task {
            Task::Segmentation => (
                ModelSpec::new(task, "unet", 1).expect("registered"),
                ScheduleSpec {
                    kind: ScheduleKind::Step2,
                    lr0: 1e-4,
                    total_epochs: 100,
                },
                OptimizerKind::Adam,
                8,
                SelectionMetric::Dice,
                MixConfig::disabled(),
            ),
            Task::Classification => (
                ModelSpec::new(task, "tiny_cnn", 3).expect("registered"),
                ScheduleSpec {
                    kind: ScheduleKind::Cosine,
                    lr0: 1e-3,
                    total_epochs: 100,
                },
                OptimizerKind::Sgd,
                16,
                SelectionMetric::Kappa,
                MixConfig::default(),
            ),
        };
        Self {
            name: "run".into(),
            task,
            seed: 0,
            data: PathBuf::from("data"),
            lesion: None,
            folds: 5,
            folds_file: None,
            model,
            pretrained: None,
            strict_head: false,
            schedule,
            optimizer,
            batch_size,
            loss: LossChoice::Dice,
            selection_metric: metric,
            val_fraction: 0.2,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            mix,
            augment: AugmentConfig::for_task(task),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::invalid(format!("run name `{}` is not a plain directory name", self.name)));
        }
        if self.model.task != self.task {
            return Err(Error::invalid("model task differs from run task"));
        }
        crate::model_zoo::Registry::default().validate(&self.model)?;
        self.schedule.validate()?;
        self.mix.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing must be in [0, 1]"));
        }
        if !(0.0..=0.5).contains(&self.augment.jitter_strength) || !(0.0..=0.5).contains(&self.augment.noise_sigma) {
            return Err(Error::invalid("jitter_strength and noise_sigma must be in [0, 0.5]"));
        }
        match self.task {
            Task::Segmentation => {
                if self.lesion.is_none() {
                    return Err(Error::invalid("segmentation runs need a lesion (IRMA, NPA or NV)"));
                }
                if self.selection_metric == SelectionMetric::Kappa {
                    return Err(Error::invalid("segmentation selects by dice or iou"));
                }
                if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
                    return Err(Error::invalid("val_fraction must be in (0, 1)"));
                }
            }
            Task::Classification => {
                if self.selection_metric != SelectionMetric::Kappa {
                    return Err(Error::invalid("classification selects by kappa"));
                }
                if self.folds < 2 {
                    return Err(Error::invalid("folds must be at least 2"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixEvent {
    pub epoch: usize,
    pub batch: usize,
    pub mode: MixMode,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub record: CheckpointRecord,
    /// Classification only.
    pub mix_events: Vec<MixEvent>,
    /// Dataset indices of every training batch, in order.
    pub batches: Vec<Vec<usize>>,
    pub val_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric,lr\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_metric, e.lr).unwrap();
        }
        out
    }

    pub fn mix_csv(&self) -> String {
        let mut out = String::from("epoch,batch,mode,lambda\n");
        for m in &self.mix_events {
            writeln!(out, "{},{},{},{}", m.epoch, m.batch, m.mode, m.lambda).unwrap();
        }
        out
    }
}

/// Parses a `log.csv` body back into epoch rows.
pub fn parse_log_csv(text: &str, source_name: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch,train_loss,val_metric,lr")) => {}
        _ => return Err(Error::parse(source_name, 1, "expected header `epoch,train_loss,val_metric,lr`")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(source_name, i + 1, format!("malformed row `{line}`"));
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(EpochLog {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: f[1].parse().map_err(|_| bad())?,
            val_metric: f[2].parse().map_err(|_| bad())?,
            lr: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Index of the best epoch: highest value, earliest on ties.
pub fn select_best(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn resize_to(img: &ImageArray, size: usize) -> ImageArray {
    if img.height() == size && img.width() == size {
        img.clone()
    } else {
        img.resize(size, size)
    }
}

pub(crate) fn resize_mask(mask: &BinaryMask, size: usize) -> BinaryMask {
    if mask.height() == size && mask.width() == size {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(size, size, |r, c| {
        let sr = ((r as f64 + 0.5) * h as f64 / size as f64).floor() as usize;
        let sc = ((c as f64 + 0.5) * w as f64 / size as f64).floor() as usize;
        mask.get(sr.min(h - 1), sc.min(w - 1))
    })
}

pub(crate) fn fold_dir(run_dir: &Path, fold: usize) -> PathBuf {
    run_dir.join(format!("fold{fold}"))
}

pub(crate) fn batches_of(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
