use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{batches_of, fold_dir, resize_mask, resize_to, write_file, EpochLog, RunConfig, TrainLog};
use super::{AugmentConfig, LOG_FILE, SUMMARY_FILE};
use crate::augment::{gaussian_noise, geometric_augment, photometric_jitter};
use crate::data::SegManifest;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageArray, ProbMask};
use crate::metrics::{hard_dice, hard_iou, SelectionMetric};
use crate::model_zoo::{save_checkpoint, CheckpointInfo, CheckpointRecord, Model, Task};
use crate::nn::Optimizer;
use crate::objectives::{joint_seg_loss, joint_seg_loss_grad, sigmoid, DEFAULT_EPS};
use crate::rng::{self, Rng};
use crate::schedules::lr_at;

pub(crate) fn build_for_run(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Model> {
    let model = crate::model_zoo::Registry::default().build(&cfg.model, cfg.seed)?;
    if !model.trainable() {
        return Err(Error::invalid(format!("`{}` cannot be trained here", cfg.model.arch)));
    }
    match &cfg.pretrained {
        None => Ok(model),
        Some(path) => {
            let (model, report) = crate::model_zoo::adapt_pretrained(model, path, cfg.strict_head)?;
            log::info!("pretrained {}: loaded {:?}, skipped {:?}", path.display(), report.loaded, report.skipped);
            warnings.extend(report.notes);
            Ok(model)
        }
    }
}

pub(crate) fn augment_image(
    img: &ImageArray,
    mask: Option<&BinaryMask>,
    aug: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(ImageArray, Option<BinaryMask>)> {
    let (mut img, mask) = geometric_augment(img, mask, &aug.geometric, rng)?;
    if aug.color_jitter {
        img = photometric_jitter(&img, aug.jitter_strength, rng);
    }
    if aug.noise_sigma > 0.0 {
        img = gaussian_noise(&img, aug.noise_sigma, rng);
    }
    Ok((img, mask))
}

fn validation_score(model: &Model, images: &[ImageArray], masks: &[BinaryMask], metric: SelectionMetric) -> Result<f64> {
    let mut total = 0.0;
    for (img, gt) in images.iter().zip(masks) {
        let pred = model.predict_mask(img)?.threshold(0.5);
        total += match metric {
            SelectionMetric::Iou => hard_iou(&pred, gt)?,
            _ => hard_dice(&pred, gt)?,
        };
    }
    Ok(total / images.len() as f64)
}

/// Trains one lesion model on an 80/20 split of the images annotated for
/// `cfg.lesion`, writing the checkpoint and `log.csv` into `out_dir`.
pub fn train_segmentation(cfg: &RunConfig, manifest: &SegManifest, out_dir: &Path) -> Result<(CheckpointRecord, TrainLog)> {
    cfg.validate()?;
    if cfg.task != Task::Segmentation {
        return Err(Error::invalid("train_segmentation needs a segmentation config"));
    }
    let started = Instant::now();
    let lesion = cfg.lesion.expect("validated");
    let annotated = manifest.annotated(lesion);
    if annotated.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "{} image(s) annotated for {lesion}; at least 2 are needed",
            annotated.len()
        )));
    }
    let size = cfg.model.input_size;
    let mut images = Vec::with_capacity(annotated.len());
    let mut masks = Vec::with_capacity(annotated.len());
    for &i in &annotated {
        let e = &manifest.entries[i];
        images.push(resize_to(&ImageArray::load(&e.image_path)?, size));
        masks.push(resize_mask(&BinaryMask::load(e.mask(lesion).expect("annotated"))?, size));
    }

    let n = annotated.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(cfg.seed, rng::SPLIT));
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let val_images: Vec<ImageArray> = val.iter().map(|&i| images[i].clone()).collect();
    let val_masks: Vec<BinaryMask> = val.iter().map(|&i| masks[i].clone()).collect();

    let mut warnings = Vec::new();
    let mut model = build_for_run(cfg, &mut warnings)?;
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let mut shuffle_rng = rng::substream(cfg.seed, rng::SHUFFLE);
    let mut aug_rng = rng::substream(cfg.seed, rng::AUGMENT);
    let (w_dice, w_jaccard) = cfg.loss.weights();
    let mut grads = model.params().zero_grads();
    let mut epochs = Vec::with_capacity(cfg.schedule.total_epochs);
    let mut batches_log = Vec::new();
    let mut best: Option<(usize, f64, crate::nn::ParamStore)> = None;

    for epoch in 0..cfg.schedule.total_epochs {
        let lr = lr_at(&cfg.schedule, epoch)?;
        let mut epoch_order = train.clone();
        epoch_order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in batches_of(&epoch_order, cfg.batch_size).into_iter().enumerate() {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let (img, mask) = augment_image(&images[i], Some(&masks[i]), &cfg.augment, &mut aug_rng)?;
                let mask = mask.expect("mask given");
                let (x, shape) = model.prepare(&img);
                let mut sample_loss = f64::NAN;
                model.logits_with_grad(
                    &x,
                    shape,
                    &mut |z| {
                        if z.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFinite {
                                epoch,
                                batch: b,
                                detail: "non-finite logits".into(),
                            });
                        }
                        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                        let pm = ProbMask::new(shape[1], shape[2], p.clone())?;
                        let gts = std::slice::from_ref(&mask);
                        sample_loss = joint_seg_loss(std::slice::from_ref(&pm), gts, w_dice, w_jaccard)?.value;
                        let g = joint_seg_loss_grad(std::slice::from_ref(&pm), gts, w_dice, w_jaccard, DEFAULT_EPS)?;
                        Ok(g[0].iter().zip(&p).map(|(gp, pi)| gp * pi * (1.0 - pi) * scale).collect())
                    },
                    &mut grads,
                )?;
                if !sample_loss.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        detail: format!("loss {sample_loss}"),
                    });
                }
                loss_sum += sample_loss;
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(model.params_mut(), &grads, lr);
            batches_log.push(batch.iter().map(|&i| annotated[i]).collect());
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_metric = validation_score(&model, &val_images, &val_masks, cfg.selection_metric)?;
        log::info!("{lesion} epoch {epoch}: loss {train_loss:.5} val {} {val_metric:.5} lr {lr}", cfg.selection_metric);
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
            fold_id: 0,
            epoch: best_epoch,
            metric: cfg.selection_metric,
            value: best_value,
            seed: cfg.seed,
            lesion: Some(lesion),
        },
    )?;
    let log = TrainLog {
        epochs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        record: record.clone(),
        mix_events: Vec::new(),
        batches: batches_log,
        val_indices: val.iter().map(|&i| annotated[i]).collect(),
        warnings,
    };
    write_file(&out_dir.join(LOG_FILE), &log.to_csv())?;
    Ok((record, log))
}

/// Segmentation run: trains into `<run_dir>/fold0` and writes `summary.kv`.
pub fn run_segmentation(cfg: &RunConfig, manifest: &SegManifest, run_dir: &Path) -> Result<(CheckpointRecord, TrainLog)> {
    let (record, log) = train_segmentation(cfg, manifest, &fold_dir(run_dir, 0))?;
    let summary = format!(
        "metric={}\nfolds=1\nmean={}\nstd=0\nfold0={}\n",
        record.val_metric_name, record.val_metric_value, record.val_metric_value
    );
    write_file(&run_dir.join(SUMMARY_FILE), &summary)?;
    Ok((record, log))
}
