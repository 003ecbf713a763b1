//! Loss functions and their analytic gradients.
//!
//! Segmentation losses work on soft (probabilistic) masks so they stay
//! differentiable; evaluation uses the hard versions in [`crate::metrics`].
//! Classification losses take probability vectors; the `*_logit_grad` helpers
//! give gradients with respect to the pre-softmax logits that the trainer
//! back-propagates.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ProbMask};

/// Additive smoothing in soft Dice/IoU. An empty prediction on an empty mask scores 1.
pub const DEFAULT_EPS: f64 = 1e-6;
/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;
/// Label-smoothing strength for the mix loss.
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

/// Batch-mean loss over `n` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub n: usize,
}

/// Components of `L = L_clf + L_mix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub clf: f64,
    pub mix: f64,
    pub n: usize,
}

struct Overlap {
    inter: f64,
    sum_pred: f64,
    sum_gt: f64,
}

fn overlap(pred: &ProbMask, gt: &BinaryMask) -> Result<Overlap> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut o = Overlap {
        inter: 0.0,
        sum_pred: 0.0,
        sum_gt: 0.0,
    };
    for (&p, &g) in pred.values().iter().zip(gt.data()) {
        o.sum_pred += p;
        if g {
            o.inter += p;
            o.sum_gt += 1.0;
        }
    }
    Ok(o)
}

/// `(2·Σ(p·g) + eps) / (Σp + Σg + eps)`.
pub fn soft_dice_score(pred: &ProbMask, gt: &BinaryMask, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let o = overlap(pred, gt)?;
    Ok((2.0 * o.inter + eps) / (o.sum_pred + o.sum_gt + eps))
}

/// `(Σ(p·g) + eps) / (Σp + Σg − Σ(p·g) + eps)`.
pub fn soft_iou_score(pred: &ProbMask, gt: &BinaryMask, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let o = overlap(pred, gt)?;
    Ok((o.inter + eps) / (o.sum_pred + o.sum_gt - o.inter + eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("smoothing eps must be > 0, got {eps}")))
    }
}

fn check_batch(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions but {} masks",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Mean of per-sample terms, summed in sorted order so the result does not
/// depend on batch order.
fn batch_mean(mut terms: Vec<f64>) -> LossValue {
    terms.sort_by(f64::total_cmp);
    LossValue {
        value: terms.iter().sum::<f64>() / terms.len() as f64,
        n: terms.len(),
    }
}

fn mean_of(
    preds: &[ProbMask],
    gts: &[BinaryMask],
    per_sample: impl Fn(&ProbMask, &BinaryMask) -> Result<f64>,
) -> Result<LossValue> {
    check_batch(preds, gts)?;
    let terms = preds.iter().zip(gts).map(|(p, g)| per_sample(p, g)).collect::<Result<Vec<_>>>()?;
    Ok(batch_mean(terms))
}

/// `(1/N) Σ (1 − Dice_i)`.
pub fn dice_loss(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<LossValue> {
    dice_loss_eps(preds, gts, DEFAULT_EPS)
}

pub fn dice_loss_eps(preds: &[ProbMask], gts: &[BinaryMask], eps: f64) -> Result<LossValue> {
    mean_of(preds, gts, |p, g| Ok(1.0 - soft_dice_score(p, g, eps)?))
}

/// `(1/N) Σ (1 − IoU_i)`.
pub fn jaccard_loss(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<LossValue> {
    jaccard_loss_eps(preds, gts, DEFAULT_EPS)
}

pub fn jaccard_loss_eps(preds: &[ProbMask], gts: &[BinaryMask], eps: f64) -> Result<LossValue> {
    mean_of(preds, gts, |p, g| Ok(1.0 - soft_iou_score(p, g, eps)?))
}

fn check_weights(w_dice: f64, w_jaccard: f64) -> Result<()> {
    if w_dice < 0.0 || w_jaccard < 0.0 || !(w_dice + w_jaccard > 0.0) {
        return Err(Error::invalid(format!(
            "loss weights must be >= 0 and not both zero, got ({w_dice}, {w_jaccard})"
        )));
    }
    Ok(())
}

/// `w_dice·L_D + w_jaccard·L_J`. A zero weight skips its term entirely.
pub fn joint_seg_loss(
    preds: &[ProbMask],
    gts: &[BinaryMask],
    w_dice: f64,
    w_jaccard: f64,
) -> Result<LossValue> {
    check_weights(w_dice, w_jaccard)?;
    check_batch(preds, gts)?;
    let mut value = 0.0;
    if w_dice != 0.0 {
        value += w_dice * dice_loss(preds, gts)?.value;
    }
    if w_jaccard != 0.0 {
        value += w_jaccard * jaccard_loss(preds, gts)?.value;
    }
    Ok(LossValue {
        value,
        n: preds.len(),
    })
}

/// Gradient of the batch-mean joint segmentation loss with respect to every
/// predicted probability, one vector per sample.
pub fn joint_seg_loss_grad(
    preds: &[ProbMask],
    gts: &[BinaryMask],
    w_dice: f64,
    w_jaccard: f64,
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    check_weights(w_dice, w_jaccard)?;
    check_batch(preds, gts)?;
    check_eps(eps)?;
    let n = preds.len() as f64;
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let o = overlap(p, g)?;
            let dice_den = o.sum_pred + o.sum_gt + eps;
            let dice_num = 2.0 * o.inter + eps;
            let union = o.sum_pred + o.sum_gt - o.inter + eps;
            let iou_num = o.inter + eps;
            Ok(g.data()
                .iter()
                .map(|&gk| {
                    let gk = if gk { 1.0 } else { 0.0 };
                    let d_dice = (2.0 * gk * dice_den - dice_num) / (dice_den * dice_den);
                    let d_iou = (gk * union - iou_num * (1.0 - gk)) / (union * union);
                    -(w_dice * d_dice + w_jaccard * d_iou) / n
                })
                .collect())
        })
        .collect()
}

pub fn dice_loss_grad(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<Vec<Vec<f64>>> {
    joint_seg_loss_grad(preds, gts, 1.0, 0.0, DEFAULT_EPS)
}

pub fn jaccard_loss_grad(preds: &[ProbMask], gts: &[BinaryMask]) -> Result<Vec<Vec<f64>>> {
    joint_seg_loss_grad(preds, gts, 0.0, 1.0, DEFAULT_EPS)
}

/// `−Σ y·log ŷ` with ŷ clamped at [`LOG_CLAMP`].
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(probs.len(), target.len());
    -probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.max(LOG_CLAMP).ln())
        .sum::<f64>()
}

/// `y·(1 − ε) + ε/K`.
pub fn smooth_label(y: &[f64], epsilon: f64, k: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("label smoothing must be in [0, 1), got {epsilon}")));
    }
    if y.len() != k || k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "label of length {} for {k} classes",
            y.len()
        )));
    }
    if epsilon == 0.0 {
        return Ok(y.to_vec());
    }
    Ok(y.iter().map(|&v| v * (1.0 - epsilon) + epsilon / k as f64).collect())
}

fn check_cls_batch(probs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    for (p, y) in probs.iter().zip(labels) {
        if p.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction of length {} vs label of length {}",
                p.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy.
pub fn classification_loss(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<LossValue> {
    check_cls_batch(probs, targets)?;
    Ok(batch_mean(probs.iter().zip(targets).map(|(p, t)| cross_entropy(p, t)).collect()))
}

/// Batch-mean cross-entropy against label-smoothed mixed targets.
pub fn mix_loss(probs: &[Vec<f64>], mixed_labels: &[Vec<f64>], epsilon: f64) -> Result<LossValue> {
    check_cls_batch(probs, mixed_labels)?;
    let terms = probs
        .iter()
        .zip(mixed_labels)
        .map(|(p, y)| Ok(cross_entropy(p, &smooth_label(y, epsilon, y.len())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_mean(terms))
}

/// `L = L_clf(raw) + L_mix(mixed)`, with both parts reported.
pub fn joint_cls_loss(
    probs_raw: &[Vec<f64>],
    y_raw: &[Vec<f64>],
    probs_mixed: &[Vec<f64>],
    y_mixed: &[Vec<f64>],
    epsilon: f64,
) -> Result<JointLoss> {
    let clf = classification_loss(probs_raw, y_raw)?;
    let mix = mix_loss(probs_mixed, y_mixed, epsilon)?;
    Ok(JointLoss {
        total: clf.value + mix.value,
        clf: clf.value,
        mix: mix.value,
        n: clf.n,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ∂/∂z of `−Σ t·log softmax(z)`: `softmax(z)·Σt − t`.
pub fn cross_entropy_logit_grad(logits: &[f64], target: &[f64]) -> Vec<f64> {
    let p = softmax(logits);
    let mass: f64 = target.iter().sum();
    p.iter().zip(target).map(|(&pi, &ti)| pi * mass - ti).collect()
}

/// Per-sample logit gradients of the batch-mean mix loss.
pub fn mix_loss_logit_grad(
    logits: &[Vec<f64>],
    mixed_labels: &[Vec<f64>],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>> {
    check_cls_batch(logits, mixed_labels)?;
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(mixed_labels)
        .map(|(z, y)| {
            let t = smooth_label(y, epsilon, y.len())?;
            Ok(cross_entropy_logit_grad(z, &t).into_iter().map(|g| g / n).collect())
        })
        .collect()
}

pub fn is_simplex(p: &[f64], tol: f64) -> bool {
    !p.is_empty() && p.iter().all(|&v| v >= -tol && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(points: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(4, 4, |r, c| points.contains(&(r, c)))
    }

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn dice_identity_and_empty() {
        let g = grid(&[(1, 1), (2, 3)]);
        let p = ProbMask::from(&g);
        assert!((soft_dice_score(&p, &g, DEFAULT_EPS).unwrap() - 1.0).abs() < 1e-9);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(soft_dice_score(&ProbMask::from(&e), &e, DEFAULT_EPS).unwrap(), 1.0);
        assert_eq!(soft_iou_score(&ProbMask::from(&e), &e, DEFAULT_EPS).unwrap(), 1.0);
    }

    #[test]
    fn one_vs_two_pixels() {
        let p = ProbMask::from(&grid(&[(0, 0)]));
        let g = grid(&[(0, 0), (0, 1)]);
        let d = soft_dice_score(&p, &g, DEFAULT_EPS).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-6);
        let j = jaccard_loss(&[p.clone()], &[g.clone()]).unwrap();
        assert!((j.value - 0.5).abs() < 1e-6);

        let perfect = ProbMask::from(&g);
        let loss = dice_loss(&[perfect.clone(), p.clone()], &[g.clone(), g.clone()]).unwrap();
        assert_eq!(loss.n, 2);
        assert!((loss.value - (1.0 - 2.0 / 3.0) / 2.0).abs() < 1e-6);

        let joint = joint_seg_loss(&[perfect, p], &[g.clone(), g], 1.0, 1.0).unwrap();
        assert!((joint.value - (1.0 / 6.0 + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn disjoint_is_total_loss() {
        let p = ProbMask::from(&grid(&[(3, 3)]));
        let g = grid(&[(0, 0)]);
        assert!((dice_loss(&[p.clone()], &[g.clone()]).unwrap().value - 1.0).abs() < 1e-6);
        assert!((jaccard_loss(&[p], &[g]).unwrap().value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_weights() {
        let p = ProbMask::new(4, 4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let g = grid(&[(0, 0), (3, 3), (1, 2)]);
        let (ps, gs) = (vec![p], vec![g]);
        assert_eq!(
            joint_seg_loss(&ps, &gs, 1.0, 0.0).unwrap().value,
            dice_loss(&ps, &gs).unwrap().value
        );
        assert_eq!(
            joint_seg_loss(&ps, &gs, 0.0, 1.0).unwrap().value,
            jaccard_loss(&ps, &gs).unwrap().value
        );
        assert!(joint_seg_loss(&ps, &gs, 0.0, 0.0).is_err());
        assert!(joint_seg_loss(&ps, &gs, -1.0, 1.0).is_err());
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        assert!(dice_loss(&[], &[]).is_err());
        assert!(jaccard_loss(&[], &[]).is_err());
        let p = ProbMask::filled(3, 3, 0.5);
        assert!(dice_loss(&[p], &[BinaryMask::empty(4, 4)]).is_err());
        assert!(mix_loss(&[], &[], 0.1).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], &one_hot(0, 3)), 0.0);
        let u = [1.0 / 3.0; 3];
        assert!((cross_entropy(&u, &one_hot(2, 3)) - 3f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.7, 0.2, 0.1], &one_hot(1, 3)) - 1.6094379124341003).abs() < 1e-12);
        // clamped, not infinite
        assert!(cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn smoothing_by_hand() {
        assert_eq!(smooth_label(&[0.2, 0.8], 0.0, 2).unwrap(), vec![0.2, 0.8]);
        let s = smooth_label(&one_hot(0, 3), 0.1, 3).unwrap();
        let expect = [0.9 + 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s[0] - 0.933_333_333_333).abs() < 1e-9);
        let s = smooth_label(&[0.5, 0.0, 0.5], 0.1, 3).unwrap();
        assert!((s[0] - 0.483_333_333_333).abs() < 1e-9);
        assert!((s[1] - 0.033_333_333_333).abs() < 1e-9);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(smooth_label(&[1.0], 1.0, 1).is_err());
    }

    #[test]
    fn mix_loss_reductions() {
        let probs = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3]];
        let ys = vec![one_hot(0, 3), one_hot(2, 3)];
        let ce = classification_loss(&probs, &ys).unwrap().value;
        assert_eq!(mix_loss(&probs, &ys, 0.0).unwrap().value, ce);

        // prediction equal to the smoothed target: loss is that target's entropy
        let target = smooth_label(&[0.5, 0.0, 0.5], 0.1, 3).unwrap();
        let entropy: f64 = -target.iter().map(|t| t * t.ln()).sum::<f64>();
        let l = mix_loss(&[target.clone()], &[vec![0.5, 0.0, 0.5]], 0.1).unwrap();
        assert!((l.value - entropy).abs() < 1e-12);
    }

    #[test]
    fn joint_cls_bookkeeping() {
        let probs = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3]];
        let ys = vec![one_hot(0, 3), one_hot(2, 3)];
        let j = joint_cls_loss(&probs, &ys, &probs, &ys, 0.0).unwrap();
        let ce = classification_loss(&probs, &ys).unwrap().value;
        assert!((j.total - 2.0 * ce).abs() < 1e-15);
        assert!((j.total - (j.clf + j.mix)).abs() < 1e-12);

        let perfect = vec![one_hot(1, 3)];
        let j = joint_cls_loss(&perfect, &perfect, &perfect, &perfect, 0.0).unwrap();
        assert_eq!(j.total, 0.0);
    }

    #[test]
    fn softmax_is_simplex() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!(is_simplex(&p, 1e-12));
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
