//! Comparison tables over finished run directories.
//!
//! Segmentation runs are listed as ID/Method/Loss/Metric/Schedule/Aug/ValScore/TestScore,
//! classification runs as ID/Method/Pre-training/Mix/ValKappa. The validation
//! cell of a cross-validated run is the mean over folds. A test score is read
//! from `eval.kv` in the run directory when one has been written there.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{load_run_config, CONFIG_FILE};
use crate::error::{Error, Result};
use crate::metrics::SelectionMetric;
use crate::model_zoo::Task;
use crate::training::{AugmentConfig, RunConfig, LOG_FILE, SUMMARY_FILE};

pub const EVAL_FILE: &str = "eval.kv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub folds: usize,
    pub mean: f64,
    pub std: f64,
    pub test: Option<f64>,
}

/// `key=value` lines; blank and `#` lines skipped.
pub fn parse_kv(text: &str, source_name: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected `key=value`"))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse(source_name, i + 1, format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn number(map: &HashMap<String, String>, key: &str, source: &Path) -> Result<f64> {
    map.get(key)
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::parse(source.display().to_string(), 0, format!("missing or bad `{key}`")))
}

pub fn load_run(dir: &Path) -> Result<RunSummary> {
    let cfg_path = dir.join(CONFIG_FILE);
    let config = load_run_config(&read(&cfg_path)?, &cfg_path.display().to_string(), None, &[])?;
    let summary_path = dir.join(SUMMARY_FILE);
    let summary = parse_kv(&read(&summary_path)?, &summary_path.display().to_string())?;
    let folds = number(&summary, "folds", &summary_path)? as usize;
    for f in 0..folds {
        let log = dir.join(format!("fold{f}")).join(LOG_FILE);
        if !log.is_file() {
            return Err(Error::io(&log, std::io::Error::new(std::io::ErrorKind::NotFound, "training log missing")));
        }
    }
    let eval_path = dir.join(EVAL_FILE);
    let test = if eval_path.is_file() {
        let kv = parse_kv(&read(&eval_path)?, &eval_path.display().to_string())?;
        let key = match (config.task, config.selection_metric, config.lesion) {
            (Task::Classification, _, _) => "kappa".to_string(),
            (_, SelectionMetric::Iou, Some(l)) => format!("iou.{l}"),
            (_, _, Some(l)) => format!("dice.{l}"),
            (_, SelectionMetric::Iou, None) => "miou".into(),
            (_, _, None) => "mdice".into(),
        };
        kv.get(&key).and_then(|v| v.parse().ok())
    } else {
        None
    };
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        folds,
        mean: number(&summary, "mean", &summary_path)?,
        std: number(&summary, "std", &summary_path)?,
        test,
        config,
    })
}

fn aug_label(a: &AugmentConfig) -> String {
    let g = &a.geometric;
    let mut parts = Vec::new();
    if g.hflip {
        parts.push("flip");
    }
    if g.rotate.is_some() {
        parts.push("rot");
    }
    if g.random_crop.is_some() {
        parts.push("crop");
    }
    if g.perspective.is_some() {
        parts.push("persp");
    }
    if a.noise_sigma > 0.0 {
        parts.push("noise");
    }
    parts.push(if a.color_jitter { "CJ" } else { "No CJ" });
    parts.join("+")
}

fn method(cfg: &RunConfig) -> String {
    match &cfg.model.encoder {
        Some(e) => format!("{}({e})", cfg.model.arch),
        None => cfg.model.arch.clone(),
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Comparison table(s) for `run_dirs`; IDs follow the given order.
pub fn write_report(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let mut seg_rows = Vec::new();
    let mut cls_rows = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let c = &r.config;
        let id = (i + 1).to_string();
        match c.task {
            Task::Segmentation => seg_rows.push(vec![
                id,
                format!("{} {}", method(c), c.lesion.map(|l| l.to_string()).unwrap_or_default()),
                c.loss.to_string(),
                c.selection_metric.to_string(),
                c.schedule.kind.to_string(),
                aug_label(&c.augment),
                format!("{:.4}", r.mean),
                r.test.map_or_else(|| "-".into(), |t| format!("{t:.4}")),
            ]),
            Task::Classification => cls_rows.push(vec![
                id,
                method(c),
                match &c.pretrained {
                    Some(p) => format!("{} ({})", c.model.pretrain_source, p.display()),
                    None => c.model.pretrain_source.to_string(),
                },
                format!("{}", c.mix.mix_prob),
                format!("{:.4} ± {:.4}", r.mean, r.std),
            ]),
        }
    }
    let mut out = String::new();
    if !seg_rows.is_empty() {
        out.push_str(&render(
            &["ID", "Method", "Loss", "Metric", "Schedule", "Aug", "ValScore", "TestScore"],
            &seg_rows,
        ));
    }
    if !cls_rows.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&render(&["ID", "Method", "Pre-training", "Mix", "ValKappa"], &cls_rows));
    }
    Ok(out)
}
