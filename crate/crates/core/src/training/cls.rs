use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::seg::{augment_image, build_for_run};
use super::{batches_of, fold_dir, resize_to, write_file, EpochLog, MixEvent, RunConfig, TrainLog};
use super::{FOLDS_FILE, LOG_FILE, MIX_LOG_FILE, SUMMARY_FILE};
use crate::augment::{hybrid_mix, MixMode};
use crate::data::{read_folds_csv, split_folds_stratified, write_folds_csv, ClsManifest, FoldAssignment};
use crate::error::{Error, Result};
use crate::image::ImageArray;
use crate::metrics::quadratic_weighted_kappa;
use crate::model_zoo::{save_checkpoint, CheckpointInfo, CheckpointRecord, Model, Task};
use crate::nn::{Optimizer, ParamStore};
use crate::objectives::{cross_entropy, cross_entropy_logit_grad, smooth_label, softmax};
use crate::rng;
use crate::schedules::lr_at;

fn one_hot(label: usize, k: usize) -> Vec<f64> {
    (0..k).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn validation_kappa(model: &Model, images: &[ImageArray], labels: &[usize], k: usize) -> Result<f64> {
    let mut preds = Vec::with_capacity(images.len());
    for img in images {
        preds.push(argmax(&model.predict_proba(img)?));
    }
    quadratic_weighted_kappa(labels, &preds, k)
}

fn check_fold_classes(manifest: &ClsManifest, train: &[usize], val: &[usize], fold: usize) -> Result<()> {
    let present: BTreeSet<usize> = manifest.entries.iter().map(|e| e.label).collect();
    for (part, idx) in [("training", train), ("validation", val)] {
        let have: BTreeSet<usize> = idx.iter().map(|&i| manifest.entries[i].label).collect();
        if let Some(c) = present.difference(&have).next() {
            return Err(Error::invalid(format!(
                "fold {fold}: class {c} has no {part} samples; use a stratified split (`split --stratified`)"
            )));
        }
    }
    Ok(())
}

/// Trains the model for one held-out fold with the hybrid mix strategy and the
/// joint loss, keeping the epoch with the best validation Kappa.
pub fn train_classifier(
    cfg: &RunConfig,
    manifest: &ClsManifest,
    folds: &FoldAssignment,
    fold_id: usize,
    out_dir: &Path,
) -> Result<(CheckpointRecord, TrainLog)> {
    cfg.validate()?;
    if cfg.task != Task::Classification {
        return Err(Error::invalid("train_classifier needs a classification config"));
    }
    if folds.fold_of.len() != manifest.entries.len() {
        return Err(Error::invalid(format!(
            "fold assignment covers {} images, manifest has {}",
            folds.fold_of.len(),
            manifest.entries.len()
        )));
    }
    if fold_id >= folds.k {
        return Err(Error::invalid(format!("fold {fold_id} outside 0..{}", folds.k)));
    }
    let k = cfg.model.num_outputs;
    if let Some(e) = manifest.entries.iter().find(|e| e.label >= k) {
        return Err(Error::invalid(format!(
            "`{}` has label {} but the model has {k} outputs",
            e.image, e.label
        )));
    }
    let started = Instant::now();
    let (train, val) = folds.train_val(fold_id);
    check_fold_classes(manifest, &train, &val, fold_id)?;

    let size = cfg.model.input_size;
    let mut images: HashMap<usize, ImageArray> = HashMap::new();
    for &i in train.iter().chain(&val) {
        images.insert(i, resize_to(&ImageArray::load(&manifest.entries[i].image_path)?, size));
    }
    let val_images: Vec<ImageArray> = val.iter().map(|i| images[i].clone()).collect();
    let val_labels: Vec<usize> = val.iter().map(|&i| manifest.entries[i].label).collect();

    let mut warnings = Vec::new();
    let mut model = build_for_run(cfg, &mut warnings)?;
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let mut shuffle_rng = rng::substream(cfg.seed, rng::SHUFFLE);
    let mut aug_rng = rng::substream(cfg.seed, rng::AUGMENT);
    let mut mix_rng = rng::substream(cfg.seed, rng::MIX);
    let eps = cfg.label_smoothing;
    let mut grads = model.params().zero_grads();
    let mut epochs = Vec::with_capacity(cfg.schedule.total_epochs);
    let mut mix_events = Vec::new();
    let mut batches_log = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 0..cfg.schedule.total_epochs {
        let lr = lr_at(&cfg.schedule, epoch)?;
        let mut order = train.clone();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in batches_of(&order, cfg.batch_size).into_iter().enumerate() {
            let mut raw = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in &batch {
                raw.push(augment_image(&images[&i], None, &cfg.augment, &mut aug_rng)?.0);
                targets.push(one_hot(manifest.entries[i].label, k));
            }
            let mixed = hybrid_mix(&raw, &targets, &cfg.mix, &mut mix_rng)?;
            if let Some(w) = &mixed.warning {
                warnings.push(format!("epoch {epoch} batch {b}: {w}"));
            }
            mix_events.push(MixEvent {
                epoch,
                batch: b,
                mode: mixed.mode,
                lambda: mixed.lambda_used,
            });

            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            let non_finite = |detail: &str| Error::NonFinite {
                epoch,
                batch: b,
                detail: detail.to_string(),
            };
            for s in 0..batch.len() {
                let smoothed = smooth_label(&mixed.soft_labels[s], eps, k)?;
                let (x, shape) = model.prepare(&raw[s]);
                let mut loss = 0.0;
                if mixed.mode == MixMode::None {
                    // raw and mixed samples coincide: both terms share one forward pass
                    model.logits_with_grad(
                        &x,
                        shape,
                        &mut |z| {
                            let p = softmax(z);
                            loss = cross_entropy(&p, &targets[s]) + cross_entropy(&p, &smoothed);
                            let g1 = cross_entropy_logit_grad(z, &targets[s]);
                            let g2 = cross_entropy_logit_grad(z, &smoothed);
                            Ok(g1.iter().zip(&g2).map(|(a, b)| (a + b) * scale).collect())
                        },
                        &mut grads,
                    )?;
                } else {
                    model.logits_with_grad(
                        &x,
                        shape,
                        &mut |z| {
                            loss += cross_entropy(&softmax(z), &targets[s]);
                            Ok(cross_entropy_logit_grad(z, &targets[s]).iter().map(|g| g * scale).collect())
                        },
                        &mut grads,
                    )?;
                    let (xm, shape_m) = model.prepare(&mixed.images[s]);
                    model.logits_with_grad(
                        &xm,
                        shape_m,
                        &mut |z| {
                            loss += cross_entropy(&softmax(z), &smoothed);
                            Ok(cross_entropy_logit_grad(z, &smoothed).iter().map(|g| g * scale).collect())
                        },
                        &mut grads,
                    )?;
                }
                if !loss.is_finite() {
                    return Err(non_finite(&format!("loss {loss}")));
                }
                loss_sum += loss;
            }
            if !grads.is_finite() {
                return Err(non_finite("non-finite gradient"));
            }
            opt.step(model.params_mut(), &grads, lr);
            batches_log.push(batch);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_metric = validation_kappa(&model, &val_images, &val_labels, k)?;
        log::info!("fold {fold_id} epoch {epoch}: loss {train_loss:.5} val kappa {val_metric:.5} lr {lr}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_metric,
            lr,
        });
        if best.as_ref().is_none_or(|(_, v, _)| val_metric > *v) {
            best = Some((epoch, val_metric, model.params().clone()));
        }
    }

    let (best_epoch, best_value, best_params) = best.expect("at least one epoch");
    *model.params_mut() = best_params;
    let record = save_checkpoint(
        &model,
        out_dir,
        &CheckpointInfo {
            fold_id,
            epoch: best_epoch,
            metric: cfg.selection_metric,
            value: best_value,
            seed: cfg.seed,
            lesion: None,
        },
    )?;
    let log = TrainLog {
        epochs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        record: record.clone(),
        mix_events,
        batches: batches_log,
        val_indices: val,
        warnings,
    };
    write_file(&out_dir.join(LOG_FILE), &log.to_csv())?;
    write_file(&out_dir.join(MIX_LOG_FILE), &log.mix_csv())?;
    Ok((record, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: FoldAssignment,
    pub records: Vec<CheckpointRecord>,
    pub logs: Vec<TrainLog>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

fn folds_from_file(cfg: &RunConfig, manifest: &ClsManifest, path: &Path) -> Result<FoldAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = read_folds_csv(&text, &path.display().to_string())?;
    let by_image: HashMap<&str, usize> = rows.iter().map(|(img, f)| (img.as_str(), *f)).collect();
    let mut fold_of = Vec::with_capacity(manifest.entries.len());
    let mut missing = Vec::new();
    for e in &manifest.entries {
        match by_image.get(e.image.as_str()) {
            Some(&f) => fold_of.push(f),
            None => missing.push(e.image.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Cases(format!("{} has no fold for: {}", path.display(), missing.join(", "))));
    }
    let k = fold_of.iter().max().map_or(0, |m| m + 1);
    let folds = FoldAssignment {
        k,
        fold_of,
        seed: cfg.seed,
    };
    if k < 2 || folds.fold_sizes().contains(&0) {
        return Err(Error::invalid(format!("{}: folds must be 0..k with k >= 2 and none empty", path.display())));
    }
    Ok(folds)
}

/// Cross validation: one checkpoint per fold under `<run_dir>/fold<k>`, the
/// assignment in `<run_dir>/folds.csv` and the mean ± std in `summary.kv`.
pub fn run_cv(cfg: &RunConfig, manifest: &ClsManifest, run_dir: &Path) -> Result<CvResult> {
    cfg.validate()?;
    let folds = match &cfg.folds_file {
        Some(path) => folds_from_file(cfg, manifest, path)?,
        None => split_folds_stratified(&manifest.labels(), cfg.folds, cfg.seed)?,
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_folds_csv(&run_dir.join(FOLDS_FILE), &manifest.images(), &folds)?;
    let mut records = Vec::with_capacity(folds.k);
    let mut logs = Vec::with_capacity(folds.k);
    for f in 0..folds.k {
        let (record, log) = train_classifier(cfg, manifest, &folds, f, &fold_dir(run_dir, f))?;
        records.push(record);
        logs.push(log);
    }
    let values: Vec<f64> = records.iter().map(|r| r.val_metric_value).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let mut summary = format!("metric={}\nfolds={}\nmean={mean}\nstd={std}\n", cfg.selection_metric, folds.k);
    for (i, v) in values.iter().enumerate() {
        summary.push_str(&format!("fold{i}={v}\n"));
    }
    write_file(&run_dir.join(SUMMARY_FILE), &summary)?;
    Ok(CvResult {
        folds,
        records,
        logs,
        mean,
        std,
    })
}
