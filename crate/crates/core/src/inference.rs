//! Single-model and ensemble prediction with test-time augmentation.
//!
//! Members are combined by a weighted mean of probabilities (class vectors or
//! pixel maps). Contributions are summed in a canonical order, so the result
//! does not depend on the order in which members are listed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::tta_ops;
use crate::data::{stem_of, Lesion};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageArray, ProbMask};
use crate::model_zoo::{load_model, load_record, CheckpointRecord, Model, Registry, Task, META_FILE};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Checkpoints and their (unnormalized) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub members: Vec<CheckpointRecord>,
    /// `None` means uniform.
    pub weights: Option<Vec<f64>>,
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::invalid(format!("ensemble weights must be positive and finite, got {w}")));
    }
    Ok(())
}

impl EnsembleSpec {
    pub fn uniform(members: Vec<CheckpointRecord>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one member"));
        }
        Ok(Self { members, weights: None })
    }

    pub fn weighted(members: Vec<CheckpointRecord>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one member"));
        }
        if weights.len() != members.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        check_weights(&weights)?;
        Ok(Self {
            members,
            weights: Some(weights),
        })
    }

    /// Weights scaled to sum to 1.
    pub fn normalized_weights(&self) -> Vec<f64> {
        match &self.weights {
            None => vec![1.0 / self.members.len() as f64; self.members.len()],
            Some(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|x| x / total).collect()
            }
        }
    }

    /// Builds an ensemble from paths with per-path weights. A path is either a
    /// checkpoint directory (or one of its files) or a run directory whose
    /// `fold*` checkpoints share that path's weight equally.
    pub fn from_paths(paths: &[(PathBuf, f64)]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one member"));
        }
        check_weights(&paths.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let mut members = Vec::new();
        let mut weights = Vec::new();
        for (path, w) in paths {
            let records = expand_path(path)?;
            let share = w / records.len() as f64;
            for r in records {
                members.push(r);
                weights.push(share);
            }
        }
        Self::weighted(members, weights)
    }

    /// Loads every member model.
    pub fn load(&self, registry: &Registry) -> Result<Ensemble> {
        let models = self
            .members
            .iter()
            .map(|r| load_model(r, registry))
            .collect::<Result<Vec<_>>>()?;
        let lesions = self.members.iter().map(|r| r.lesion).collect();
        Ensemble::new(models, self.normalized_weights(), lesions)
    }
}

fn expand_path(path: &Path) -> Result<Vec<CheckpointRecord>> {
    if !path.is_dir() || path.join(META_FILE).is_file() {
        return Ok(vec![load_record(path)?]);
    }
    let mut fold_dirs: Vec<(usize, PathBuf)> = Vec::new();
    let listing = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(idx) = name.strip_prefix("fold").and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if entry.path().join(META_FILE).is_file() {
            fold_dirs.push((idx, entry.path()));
        }
    }
    if fold_dirs.is_empty() {
        return Err(Error::invalid(format!(
            "{} holds no checkpoint and no fold<k>/ checkpoints",
            path.display()
        )));
    }
    fold_dirs.sort();
    fold_dirs.iter().map(|(_, d)| load_record(d)).collect()
}

/// Parses an ensemble file: header `checkpoint,weight`, one member per line.
/// Relative paths are returned as written.
pub fn parse_ensemble_manifest(text: &str, source_name: &str) -> Result<Vec<(PathBuf, f64)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == "checkpoint,weight" => {}
        Some((i, _)) => return Err(Error::parse(source_name, i + 1, "expected header `checkpoint,weight`")),
        None => return Err(Error::parse(source_name, 1, "empty ensemble file")),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let Some((path, weight)) = line.rsplit_once(',') else {
            return Err(Error::parse(source_name, line_no, "expected `checkpoint,weight`"));
        };
        let path = path.trim();
        if path.is_empty() {
            return Err(Error::parse(source_name, line_no, "empty checkpoint path"));
        }
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad weight `{}`", weight.trim())))?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::parse(source_name, line_no, format!("weight must be positive, got {weight}")));
        }
        if !seen.insert(path.to_string()) {
            return Err(Error::parse(source_name, line_no, format!("`{path}` listed twice")));
        }
        out.push((PathBuf::from(path), weight));
    }
    if out.is_empty() {
        return Err(Error::parse(source_name, 1, "ensemble file lists no checkpoints"));
    }
    Ok(out)
}

pub fn write_ensemble_manifest(members: &[(PathBuf, f64)]) -> String {
    let mut out = String::from("checkpoint,weight\n");
    for (p, w) in members {
        writeln!(out, "{},{w}", p.display()).unwrap();
    }
    out
}

/// Reads an ensemble file, resolving relative paths against its directory.
pub fn read_ensemble_file(path: &Path) -> Result<Vec<(PathBuf, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_ensemble_manifest(&text, &path.display().to_string())?
        .into_iter()
        .map(|(p, w)| (if p.is_absolute() { p } else { base.join(p) }, w))
        .collect())
}

/// Loaded members with normalized weights.
#[derive(Debug)]
pub struct Ensemble {
    models: Vec<Model>,
    weights: Vec<f64>,
    lesions: Vec<Option<Lesion>>,
    task: Task,
}

impl Ensemble {
    pub fn new(models: Vec<Model>, weights: Vec<f64>, lesions: Vec<Option<Lesion>>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        if weights.len() != models.len() || lesions.len() != models.len() {
            return Err(Error::invalid("one weight and one lesion tag per member"));
        }
        check_weights(&weights)?;
        let task = first.spec().task;
        if models.iter().any(|m| m.spec().task != task) {
            return Err(Error::invalid("ensemble mixes segmentation and classification members"));
        }
        if task == Task::Classification {
            let k = first.spec().num_outputs;
            if let Some(m) = models.iter().find(|m| m.spec().num_outputs != k) {
                return Err(Error::invalid(format!(
                    "class count mismatch among members: {k} vs {}",
                    m.spec().num_outputs
                )));
            }
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            models,
            weights,
            lesions,
            task,
        })
    }

    /// Equal-weight ensemble of in-memory models.
    pub fn uniform(models: Vec<Model>) -> Result<Self> {
        let n = models.len();
        let lesions = vec![None; n];
        Self::new(models, vec![1.0; n], lesions)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.models[0].spec().num_outputs
    }

    /// Sub-ensembles per lesion tag, renormalized.
    pub fn by_lesion(self) -> Result<BTreeMap<Lesion, Ensemble>> {
        let mut groups: BTreeMap<Lesion, (Vec<Model>, Vec<f64>)> = BTreeMap::new();
        for ((m, w), l) in self.models.into_iter().zip(self.weights).zip(self.lesions) {
            let l = l.ok_or_else(|| Error::invalid("segmentation member without a lesion tag"))?;
            let g = groups.entry(l).or_default();
            g.0.push(m);
            g.1.push(w);
        }
        groups
            .into_iter()
            .map(|(l, (models, weights))| {
                let n = models.len();
                Ok((l, Ensemble::new(models, weights, vec![Some(l); n])?))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Classification { probs: Vec<f64>, class: usize },
    Segmentation { probs: ProbMask, mask: BinaryMask },
}

impl Prediction {
    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Classification { class, .. } => Some(*class),
            Prediction::Segmentation { .. } => None,
        }
    }
}

/// First index of the largest value.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Σ wᵢ·vᵢ with terms summed in a fixed order of (weight, values).
fn weighted_mean(mut terms: Vec<(f64, Vec<f64>)>) -> Vec<f64> {
    terms.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1)));
    let mut out = vec![0.0; terms[0].1.len()];
    for (w, v) in &terms {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

fn mean_of(vs: Vec<Vec<f64>>) -> Vec<f64> {
    if vs.len() == 1 {
        return vs.into_iter().next().unwrap();
    }
    let n = vs.len() as f64;
    let mut out = vec![0.0; vs[0].len()];
    for v in &vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Class probabilities of one model averaged over the first `tta_t` views.
pub fn model_proba_tta(model: &Model, img: &ImageArray, tta_t: usize) -> Result<Vec<f64>> {
    let views = tta_ops(tta_t)?
        .iter()
        .map(|&op| model.predict_proba(&img.apply(op)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(views))
}

/// Foreground map of one model; each view's prediction is mapped back before averaging.
pub fn model_mask_tta(model: &Model, img: &ImageArray, tta_t: usize) -> Result<ProbMask> {
    let views = tta_ops(tta_t)?
        .iter()
        .map(|&op| Ok(model.predict_mask(&img.apply(op))?.apply_inverse(op).values().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    ProbMask::new(img.height(), img.width(), mean_of(views))
}

pub fn predict_cls(ens: &Ensemble, img: &ImageArray, tta_t: usize) -> Result<Prediction> {
    if ens.task != Task::Classification {
        return Err(Error::invalid("predict_cls needs classification members"));
    }
    let terms = ens
        .models
        .iter()
        .zip(&ens.weights)
        .map(|(m, &w)| Ok((w, model_proba_tta(m, img, tta_t)?)))
        .collect::<Result<Vec<_>>>()?;
    let probs = weighted_mean(terms);
    Ok(Prediction::Classification {
        class: argmax(&probs),
        probs,
    })
}

pub fn predict_seg(ens: &Ensemble, img: &ImageArray, tta_t: usize, threshold: f64) -> Result<Prediction> {
    if ens.task != Task::Segmentation {
        return Err(Error::invalid("predict_seg needs segmentation members"));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let mut terms = Vec::with_capacity(ens.len());
    for (m, &w) in ens.models.iter().zip(&ens.weights) {
        let map = model_mask_tta(m, img, tta_t)?;
        if map.height() != img.height() || map.width() != img.width() {
            return Err(Error::ShapeMismatch(format!(
                "member map is {}x{}, image is {}x{}",
                map.height(),
                map.width(),
                img.height(),
                img.width()
            )));
        }
        terms.push((w, map.values().to_vec()));
    }
    let values = weighted_mean(terms).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let probs = ProbMask::new(img.height(), img.width(), values)?;
    let mask = probs.threshold(threshold);
    Ok(Prediction::Segmentation { probs, mask })
}

/// What [`predict_dataset`] wrote.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Removes what was created so far unless disarmed.
struct Cleanup {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if self.armed {
            for f in &self.files {
                let _ = std::fs::remove_file(f);
            }
            for d in self.dirs.iter().rev() {
                let _ = std::fs::remove_dir(d);
            }
        }
    }
}

impl Cleanup {
    fn mkdir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.files.push(path.to_path_buf());
        Ok(())
    }
}

/// Writes challenge-format outputs for `images`: `predictions.csv` for
/// classification, `<out>/<LESION>/<stem>.png` ({0,255}) for segmentation.
/// On error everything written so far is removed.
pub fn predict_dataset(
    ens: Ensemble,
    images: &[PathBuf],
    out_dir: &Path,
    tta_t: usize,
    threshold: f64,
) -> Result<PredictSummary> {
    tta_ops(tta_t)?;
    let mut seen = HashSet::new();
    for p in images {
        let stem = stem_of(&p.to_string_lossy());
        if !seen.insert(stem.clone()) {
            return Err(Error::invalid(format!("two input images share the case id `{stem}`")));
        }
    }
    let mut cleanup = Cleanup {
        files: Vec::new(),
        dirs: Vec::new(),
        armed: true,
    };
    let mut summary = PredictSummary::default();
    if images.is_empty() {
        summary.warnings.push("no input images; outputs are empty".into());
    }
    cleanup.mkdir(out_dir)?;
    match ens.task() {
        Task::Classification => {
            let k = ens.num_classes();
            let mut csv = String::from("case,class");
            for c in 0..k {
                write!(csv, ",P{c}").unwrap();
            }
            csv.push('\n');
            for p in images {
                let img = ImageArray::load(p)?;
                let Prediction::Classification { probs, class } = predict_cls(&ens, &img, tta_t)? else {
                    unreachable!()
                };
                write!(csv, "{},{class}", stem_of(&p.to_string_lossy())).unwrap();
                for v in probs {
                    write!(csv, ",{v:.6}").unwrap();
                }
                csv.push('\n');
            }
            let path = out_dir.join(PREDICTIONS_FILE);
            cleanup.write(&path, csv.as_bytes())?;
        }
        Task::Segmentation => {
            for (lesion, group) in ens.by_lesion()? {
                let dir = out_dir.join(lesion.as_str());
                cleanup.mkdir(&dir)?;
                for p in images {
                    let img = ImageArray::load(p)?;
                    let Prediction::Segmentation { mask, .. } = predict_seg(&group, &img, tta_t, threshold)? else {
                        unreachable!()
                    };
                    let path = dir.join(format!("{}.png", stem_of(&p.to_string_lossy())));
                    cleanup.write(&path, &mask.encode_png())?;
                }
            }
        }
    }
    cleanup.armed = false;
    summary.files = std::mem::take(&mut cleanup.files);
    Ok(summary)
}

/// PNG files of `dir/images` (or `dir` itself), sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let root = if dir.join("images").is_dir() {
        dir.join("images")
    } else {
        dir.to_path_buf()
    };
    let listing = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut out = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&root, e))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
