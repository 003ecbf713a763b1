use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{hard_dice, hard_iou, ovr_auc_report, weighted_kappa, AucAverage, ConfusionMatrix, KappaWeights};
use crate::data::{load_seg_manifest, parse_labels_csv, stem_of, Lesion, SegManifest};
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::model_zoo::Task;

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredRow {
    pub case: String,
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Parses `case,class,P0,…,P{K-1}`. Duplicate cases are rejected.
pub fn parse_predictions_csv(text: &str, source_name: &str) -> Result<Vec<PredRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let k = headers.len().saturating_sub(2);
    let header_ok = headers.len() >= 4
        && &headers[0] == "case"
        && &headers[1] == "class"
        && (0..k).all(|c| headers[c + 2] == format!("P{c}"));
    if !header_ok {
        return Err(Error::parse(source_name, 1, "expected header `case,class,P0,P1,...`"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let case = rec[0].trim().to_string();
        if case.is_empty() {
            return Err(Error::parse(source_name, line, "empty case id"));
        }
        let class: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source_name, line, format!("bad class `{}`", &rec[1])))?;
        if class >= k {
            return Err(Error::parse(source_name, line, format!("class {class} outside [0, {k})")));
        }
        let probs = (0..k)
            .map(|c| {
                let cell = rec[c + 2].trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|p| p.is_finite() && (0.0..=1.0).contains(p))
                    .ok_or_else(|| Error::parse(source_name, line, format!("bad probability `{cell}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if !seen.insert(case.clone()) {
            return Err(Error::parse(source_name, line, format!("duplicate case `{case}`")));
        }
        rows.push(PredRow { case, class, probs });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionScore {
    pub lesion: Lesion,
    pub dice: f64,
    pub iou: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub lesions: Vec<LesionScore>,
    pub mdice: f64,
    pub miou: f64,
}

impl SegReport {
    /// Means over the evaluated lesions.
    pub fn from_lesions(lesions: Vec<LesionScore>) -> Result<Self> {
        if lesions.is_empty() {
            return Err(Error::EmptyDataset("no lesion was evaluated".into()));
        }
        let n = lesions.len() as f64;
        Ok(Self {
            mdice: lesions.iter().map(|l| l.dice).sum::<f64>() / n,
            miou: lesions.iter().map(|l| l.iou).sum::<f64>() / n,
            lesions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsReport {
    pub kappa: f64,
    pub kappa_weights: KappaWeights,
    /// `None` when undefined; see `auc_note`.
    pub auc: Option<f64>,
    pub auc_average: AucAverage,
    pub auc_note: Option<String>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Segmentation(SegReport),
    Classification(ClsReport),
}

impl EvalReport {
    /// Leaderboard-style text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        match self {
            EvalReport::Segmentation(r) => {
                writeln!(out, "{:<8} {:>8} {:>8} {:>7}", "Lesion", "Dice", "IoU", "Images").unwrap();
                for l in &r.lesions {
                    writeln!(out, "{:<8} {:>8.4} {:>8.4} {:>7}", l.lesion.as_str(), l.dice, l.iou, l.images).unwrap();
                }
                writeln!(out, "{:<8} {:>8.4} {:>8.4}", "mean", r.mdice, r.miou).unwrap();
            }
            EvalReport::Classification(r) => {
                let auc = r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
                writeln!(out, "{:>8} {:>8} {:>6}", "Kappa", "AUC", "N").unwrap();
                writeln!(out, "{:>8.4} {:>8} {:>6}", r.kappa, auc, r.confusion.total()).unwrap();
                if let Some(note) = &r.auc_note {
                    writeln!(out, "note: {note}").unwrap();
                }
                writeln!(out, "confusion (rows = truth, cols = prediction)").unwrap();
                write!(out, "{:>6}", "").unwrap();
                for j in 0..r.confusion.k {
                    write!(out, " {j:>6}").unwrap();
                }
                out.push('\n');
                for (i, row) in r.confusion.counts.iter().enumerate() {
                    write!(out, "{i:>6}").unwrap();
                    for c in row {
                        write!(out, " {c:>6}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// `key=value` lines with full precision.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        match self {
            EvalReport::Segmentation(r) => {
                writeln!(out, "task=segmentation").unwrap();
                for l in &r.lesions {
                    writeln!(out, "dice.{}={}", l.lesion, l.dice).unwrap();
                    writeln!(out, "iou.{}={}", l.lesion, l.iou).unwrap();
                    writeln!(out, "images.{}={}", l.lesion, l.images).unwrap();
                }
                writeln!(out, "mdice={}", r.mdice).unwrap();
                writeln!(out, "miou={}", r.miou).unwrap();
            }
            EvalReport::Classification(r) => {
                writeln!(out, "task=classification").unwrap();
                writeln!(out, "kappa={}", r.kappa).unwrap();
                writeln!(out, "kappa_weights={}", r.kappa_weights).unwrap();
                match r.auc {
                    Some(a) => writeln!(out, "auc={a}").unwrap(),
                    None => writeln!(out, "auc=nan").unwrap(),
                }
                writeln!(out, "auc_average={}", r.auc_average).unwrap();
                writeln!(out, "n={}", r.confusion.total()).unwrap();
                for (i, row) in r.confusion.counts.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                    writeln!(out, "confusion.{i}={}", cells.join(" ")).unwrap();
                }
            }
        }
        out
    }
}

fn cases_error(missing: &[String], extra: &[String]) -> Error {
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing predictions for {} case(s): {}", missing.len(), missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("predictions for {} unknown case(s): {}", extra.len(), extra.join(", ")));
    }
    Error::Cases(parts.join("; "))
}

pub fn evaluate_cls(
    preds: &[PredRow],
    labels: &[(String, usize)],
    weights: KappaWeights,
    average: AucAverage,
) -> Result<ClsReport> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("ground truth lists no cases".into()));
    }
    let truth: BTreeMap<String, usize> = labels.iter().map(|(img, l)| (stem_of(img), *l)).collect();
    let by_case: HashMap<&str, &PredRow> = preds.iter().map(|p| (p.case.as_str(), p)).collect();
    let missing: Vec<String> = truth.keys().filter(|c| !by_case.contains_key(c.as_str())).cloned().collect();
    let mut extra: Vec<String> = preds
        .iter()
        .filter(|p| !truth.contains_key(&p.case))
        .map(|p| p.case.clone())
        .collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(cases_error(&missing, &extra));
    }
    let k_pred = preds[0].probs.len();
    if let Some(p) = preds.iter().find(|p| p.probs.len() != k_pred) {
        return Err(Error::ShapeMismatch(format!("case `{}` has {} probabilities", p.case, p.probs.len())));
    }
    let k_true = truth.values().max().copied().unwrap_or(0) + 1;
    if k_true > k_pred {
        return Err(Error::ShapeMismatch(format!(
            "ground truth has label {} but predictions carry {k_pred} classes",
            k_true - 1
        )));
    }
    let mut y_true = Vec::with_capacity(truth.len());
    let mut y_pred = Vec::with_capacity(truth.len());
    let mut probs = Vec::with_capacity(truth.len());
    for (case, &label) in &truth {
        let p = by_case[case.as_str()];
        y_true.push(label);
        y_pred.push(p.class);
        probs.push(p.probs.clone());
    }
    let kappa = weighted_kappa(&y_true, &y_pred, k_pred, weights)?;
    let (auc, auc_note) = match ovr_auc_report(&y_true, &probs, average) {
        Ok(r) => {
            let note = (!r.skipped.is_empty()).then(|| format!("classes {:?} absent from truth; skipped in AUC", r.skipped));
            (Some(r.value), note)
        }
        Err(e) => (None, Some(format!("AUC undefined: {e}"))),
    };
    Ok(ClsReport {
        kappa,
        kappa_weights: weights,
        auc,
        auc_average: average,
        auc_note,
        confusion: ConfusionMatrix::new(&y_true, &y_pred, k_pred)?,
    })
}

/// Scores `<pred_dir>/<LESION>/<stem>.png` against every annotated image of
/// each lesion that has a prediction directory.
///
/// A lesion's Dice and IoU are means of the per-image scores.
pub fn evaluate_seg(pred_dir: &Path, manifest: &SegManifest) -> Result<SegReport> {
    if !Lesion::ALL.iter().any(|l| pred_dir.join(l.as_str()).is_dir()) {
        return Err(Error::Cases(format!(
            "{} has no IRMA/, NPA/ or NV/ prediction directory",
            pred_dir.display()
        )));
    }
    let known: BTreeSet<String> = manifest.entries.iter().map(|e| e.stem()).collect();
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    let mut scores = Vec::new();
    for lesion in Lesion::ALL {
        let annotated = manifest.annotated(lesion);
        if annotated.is_empty() {
            continue;
        }
        let dir = pred_dir.join(lesion.as_str());
        if !dir.is_dir() {
            continue;
        }
        if let Ok(rd) = std::fs::read_dir(&dir) {
            for entry in rd.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.to_ascii_lowercase().ends_with(".png") && !known.contains(&stem_of(&name)) {
                    extra.push(format!("{lesion}/{}", stem_of(&name)));
                }
            }
        }
        let mut dice = 0.0;
        let mut iou = 0.0;
        let mut count = 0;
        for &i in &annotated {
            let e = &manifest.entries[i];
            let path = dir.join(format!("{}.png", e.stem()));
            if !path.is_file() {
                missing.push(format!("{lesion}/{}", e.stem()));
                continue;
            }
            let pred = BinaryMask::load(&path)?;
            let gt = BinaryMask::load(e.mask(lesion).expect("annotated"))?;
            dice += hard_dice(&pred, &gt)?;
            iou += hard_iou(&pred, &gt)?;
            count += 1;
        }
        if count > 0 {
            scores.push(LesionScore {
                lesion,
                dice: dice / count as f64,
                iou: iou / count as f64,
                images: count,
            });
        }
    }
    if !missing.is_empty() || !extra.is_empty() {
        extra.sort();
        return Err(cases_error(&missing, &extra));
    }
    SegReport::from_lesions(scores)
}

/// `pred` is a prediction directory (segmentation) or `predictions.csv`
/// (classification); `gt` is a dataset root or, for classification, a labels file.
pub fn evaluate(pred: &Path, gt: &Path, task: Task) -> Result<EvalReport> {
    evaluate_with(pred, gt, task, KappaWeights::Quadratic, AucAverage::Macro)
}

/// [`evaluate`] with explicit Kappa weighting and AUC averaging.
pub fn evaluate_with(pred: &Path, gt: &Path, task: Task, weights: KappaWeights, average: AucAverage) -> Result<EvalReport> {
    match task {
        Task::Segmentation => {
            let manifest = load_seg_manifest(gt)?;
            Ok(EvalReport::Segmentation(evaluate_seg(pred, &manifest)?))
        }
        Task::Classification => {
            let labels_path = if gt.is_dir() { gt.join("labels.csv") } else { gt.to_path_buf() };
            let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
            let labels = parse_labels_csv(&text, &labels_path.display().to_string())?;
            let text = std::fs::read_to_string(pred).map_err(|e| Error::io(pred, e))?;
            let preds = parse_predictions_csv(&text, &pred.display().to_string())?;
            Ok(EvalReport::Classification(evaluate_cls(
                &preds,
                &labels,
                weights,
                average,
            )?))
        }
    }
}
