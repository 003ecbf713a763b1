//! Challenge metrics and dataset-level evaluation.
//!
//! Mask overlap (Dice, IoU), weighted Cohen's Kappa over ordinal grades and
//! one-vs-rest ROC AUC from the Mann-Whitney rank statistic. [`evaluate`] scores
//! a prediction directory or `predictions.csv` against ground truth.

mod eval;

use std::fmt;
use std::str::FromStr;

pub use eval::{
    evaluate, evaluate_cls, evaluate_seg, evaluate_with, parse_predictions_csv, ClsReport, EvalReport,
    LesionScore, PredRow, SegReport,
};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Validation score used to pick the retained epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMetric {
    Dice,
    Iou,
    Kappa,
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Dice => "dice",
            SelectionMetric::Iou => "iou",
            SelectionMetric::Kappa => "kappa",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dice" => Ok(SelectionMetric::Dice),
            "iou" => Ok(SelectionMetric::Iou),
            "kappa" => Ok(SelectionMetric::Kappa),
            other => Err(Error::invalid(format!(
                "unknown selection metric `{other}` (expected dice, iou or kappa)"
            ))),
        }
    }
}

fn overlap_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut inter = 0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
    }
    Ok((inter, pred.count(), gt.count()))
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn hard_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = overlap_counts(pred, gt)?;
    Ok(if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    })
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn hard_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = overlap_counts(pred, gt)?;
    let union = a + b - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Rows are truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

fn check_labels(labels: &[usize], k: usize, what: &str) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::invalid(format!("{what}[{i}] = {l} is outside [0, {k})")));
    }
    Ok(())
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} truths vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        check_labels(y_true, k, "y_true")?;
        check_labels(y_pred, k, "y_pred")?;
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            counts[t][p] += 1;
        }
        Ok(Self { k, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.k).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Disagreement penalty of the weighted Kappa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaWeights {
    /// `(i − j)² / (K − 1)²`
    #[default]
    Quadratic,
    /// `|i − j| / (K − 1)`
    Linear,
}

impl KappaWeights {
    fn weight(self, i: usize, j: usize, k: usize) -> f64 {
        let d = i.abs_diff(j) as f64 / (k - 1) as f64;
        match self {
            KappaWeights::Quadratic => d * d,
            KappaWeights::Linear => d,
        }
    }
}

impl fmt::Display for KappaWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KappaWeights::Quadratic => "quadratic",
            KappaWeights::Linear => "linear",
        })
    }
}

impl FromStr for KappaWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadratic" => Ok(KappaWeights::Quadratic),
            "linear" => Ok(KappaWeights::Linear),
            other => Err(Error::invalid(format!(
                "unknown kappa weights `{other}` (expected quadratic or linear)"
            ))),
        }
    }
}

pub fn weighted_kappa(y_true: &[usize], y_pred: &[usize], k: usize, weights: KappaWeights) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::invalid("kappa of an empty labeling"));
    }
    if k < 2 {
        return Err(Error::invalid(format!("kappa needs K >= 2, got {k}")));
    }
    let cm = ConfusionMatrix::new(y_true, y_pred, k)?;
    let n = cm.total() as f64;
    let rows = cm.row_totals();
    let cols = cm.col_totals();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = weights.weight(i, j, k);
            observed += w * cm.counts[i][j] as f64;
            expected += w * rows[i] as f64 * cols[j] as f64 / n;
        }
    }
    if expected == 0.0 {
        return Ok(if observed == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - observed / expected)
}

pub fn quadratic_weighted_kappa(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64> {
    weighted_kappa(y_true, y_pred, k, KappaWeights::Quadratic)
}

/// Area under the ROC curve of `scores` for the positive flags, ties counted half.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} scores",
            positive.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// How per-class AUCs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucAverage {
    /// Unweighted mean over classes present in the truth.
    #[default]
    Macro,
    /// Mean weighted by class prevalence.
    Weighted,
}

impl fmt::Display for AucAverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AucAverage::Macro => "macro",
            AucAverage::Weighted => "weighted",
        })
    }
}

impl FromStr for AucAverage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "macro" => Ok(AucAverage::Macro),
            "weighted" => Ok(AucAverage::Weighted),
            other => Err(Error::invalid(format!(
                "unknown AUC average `{other}` (expected macro or weighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub value: f64,
    /// `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Tolerance on row sums of the probability matrix.
pub const SIMPLEX_TOL: f64 = 1e-5;

pub fn ovr_auc_report(y_true: &[usize], probs: &[Vec<f64>], average: AucAverage) -> Result<AucReport> {
    if y_true.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} probability rows",
            y_true.len(),
            probs.len()
        )));
    }
    let k = probs.first().map(Vec::len).unwrap_or(0);
    if k < 2 {
        return Err(Error::invalid("AUC needs at least 2 classes"));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k || !crate::objectives::is_simplex(row, SIMPLEX_TOL) {
            return Err(Error::invalid(format!("probability row {i} is not on the {k}-simplex")));
        }
    }
    check_labels(y_true, k, "y_true")?;
    let mut present = vec![0usize; k];
    for &y in y_true {
        present[y] += 1;
    }
    if present.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("AUC is undefined when the truth holds a single class"));
    }
    let mut per_class = vec![None; k];
    let mut skipped = Vec::new();
    for c in 0..k {
        if present[c] == 0 {
            skipped.push(c);
            continue;
        }
        let flags: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        per_class[c] = Some(binary_auc(&flags, &scores)?);
    }
    let value = match average {
        AucAverage::Macro => {
            let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        }
        AucAverage::Weighted => {
            per_class
                .iter()
                .enumerate()
                .filter_map(|(c, a)| a.map(|a| a * present[c] as f64))
                .sum::<f64>()
                / y_true.len() as f64
        }
    };
    Ok(AucReport {
        value,
        per_class,
        skipped,
    })
}

/// Macro one-vs-rest AUC.
pub fn ovr_auc(y_true: &[usize], probs: &[Vec<f64>]) -> Result<f64> {
    Ok(ovr_auc_report(y_true, probs, AucAverage::Macro)?.value)
}
