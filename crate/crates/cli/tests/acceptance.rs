//! Acceptance run: one PASS/FAIL line per criterion.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use deepocta::augment::{cutmix_pair, hybrid_mix, mixup_pair, sample_lambda, MixConfig};
use deepocta::data::load_seg_manifest;
use deepocta::inference::{model_mask_tta, model_proba_tta, predict_cls, predict_seg, Ensemble, Prediction};
use deepocta::metrics::{ovr_auc, quadratic_weighted_kappa};
use deepocta::model_zoo::{Model, ModelSpec, Registry, Task};
use deepocta::objectives::{
    cross_entropy, cross_entropy_logit_grad, dice_loss, dice_loss_grad, jaccard_loss, jaccard_loss_grad, mix_loss,
    mix_loss_logit_grad, softmax, LossValue,
};
use deepocta::report::parse_kv;
use deepocta::schedules::{lr_at, ScheduleKind, ScheduleSpec};
use deepocta::training::parse_log_csv;
use deepocta::{rng, BinaryMask, ImageArray, ProbMask};
use rand::Rng as _;
use support::{central_diff, kappa_pairwise, macro_auc_all_pairs, moments, rel_err};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn onehot(k: usize, c: usize) -> Vec<f64> {
    let mut y = vec![0.0; k];
    y[c] = 1.0;
    y
}

fn loss_oracles() -> Outcome {
    let gt = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
    let on_off = |on: f64, off: f64| {
        ProbMask::new(4, 4, gt.data().iter().map(|&g| if g { on } else { off }).collect()).unwrap()
    };
    let cases = [
        (on_off(0.5, 0.5), 2.0 / 3.0, 0.8),
        (on_off(0.9, 0.1), 1.0 - 7.2 / 8.8, 1.0 - 3.6 / 5.2),
        (on_off(1.0, 0.0), 0.0, 0.0),
        (on_off(0.0, 1.0), 1.0, 1.0),
    ];
    let mut worst: f64 = 0.0;
    for (p, want_d, want_j) in cases {
        let d = ok(dice_loss(&[p.clone()], &[gt.clone()]))?.value;
        let j = ok(jaccard_loss(&[p], &[gt.clone()]))?.value;
        worst = worst.max((d - want_d).abs()).max((j - want_j).abs());
    }
    ensure(worst <= 1e-6, || format!("hand-computed loss off by {worst:e}"))?;

    let mut r = rng::from_seed(101);
    let mut gap: f64 = 0.0;
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..16), r.random_range(1..16));
        let p = r.random::<f64>();
        let a = BinaryMask::from_fn(h, w, |_, _| r.random::<f64>() < p);
        let b = BinaryMask::from_fn(h, w, |_, _| r.random::<f64>() < p);
        let d = ok(deepocta::metrics::hard_dice(&a, &b))?;
        let i = ok(deepocta::metrics::hard_iou(&a, &b))?;
        gap = gap.max((d - 2.0 * i / (1.0 + i)).abs());
    }
    ensure(gap <= 1e-9, || format!("Dice/IoU identity gap {gap:e}"))?;
    Ok(format!("max loss error {worst:.1e}, identity gap {gap:.1e}"))
}

fn mix_correctness() -> Outcome {
    let size = 512;
    let xi = ImageArray::filled(size, size, 1, 0.0);
    let xj = ImageArray::filled(size, size, 1, 1.0);
    let (yi, yj) = (onehot(3, 0), onehot(3, 2));
    let mut r = rng::from_seed(102);
    for n in 0..10_000 {
        let lam = ok(sample_lambda(1.0, &mut r))?;
        let (x, y, lam_adj) = ok(cutmix_pair(&xi, &yi, &xj, &yj, lam, &mut r))?;
        let from_i = x.data().iter().filter(|&&v| v == 0.0).count();
        ensure(lam_adj * (size * size) as f64 == from_i as f64, || {
            format!("application {n}: λ_adj·WH = {} but {from_i} pixels from xi", lam_adj * (size * size) as f64)
        })?;
        ensure(y[0] == lam_adj, || format!("application {n}: label weight {} vs λ_adj {lam_adj}", y[0]))?;
    }

    let small_i = ImageArray::from_fn(8, 8, 3, |_, _, _| r.random::<f64>());
    let small_j = ImageArray::from_fn(8, 8, 3, |_, _, _| r.random::<f64>());
    for _ in 0..10_000 {
        let k = r.random_range(2..6);
        let (a, b) = (onehot(k, r.random_range(0..k)), onehot(k, r.random_range(0..k)));
        let lam = ok(sample_lambda(0.4, &mut r))?;
        let (_, y) = ok(mixup_pair(&small_i, &a, &small_j, &b, lam))?;
        let sum: f64 = y.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-9 && y.iter().all(|&v| v >= 0.0), || format!("MixUp label {y:?}"))?;
    }
    let images: Vec<ImageArray> = (0..6).map(|_| ImageArray::from_fn(8, 8, 1, |_, _, _| r.random::<f64>())).collect();
    let labels: Vec<Vec<f64>> = (0..6).map(|i| onehot(3, i % 3)).collect();
    let always = MixConfig { mix_prob: 1.0, ..MixConfig::default() };
    for _ in 0..1000 {
        let m = ok(hybrid_mix(&images, &labels, &always, &mut r))?;
        for y in &m.soft_labels {
            ensure((y.iter().sum::<f64>() - 1.0).abs() <= 1e-9, || format!("hybrid label {y:?}"))?;
        }
    }

    let (x, y) = ok(mixup_pair(&small_i, &yi, &small_j, &yj, 1.0))?;
    let bitwise = |a: &ImageArray, b: &ImageArray| a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
    ensure(bitwise(&x, &small_i) && y == yi, || "MixUp at λ=1 changed the input".into())?;
    let (x, y, lam) = ok(cutmix_pair(&small_i, &yi, &small_j, &yj, 1.0, &mut r))?;
    ensure(bitwise(&x, &small_i) && y == yi && lam == 1.0, || "CutMix at λ=1 changed the input".into())?;
    Ok("10000 CutMix pixel counts exact".into())
}

fn beta_sampling() -> Outcome {
    let mut parts = Vec::new();
    for alpha in [0.4, 1.0] {
        let mut r = rng::substream(103, rng::MIX);
        let mut xs = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            xs.push(ok(sample_lambda(alpha, &mut r))?);
        }
        let (mean, var) = moments(&xs);
        let want = alpha * alpha / ((2.0 * alpha).powi(2) * (2.0 * alpha + 1.0));
        ensure((mean - 0.5).abs() <= 0.005, || format!("α={alpha}: mean {mean}"))?;
        ensure((var - want).abs() <= 0.005, || format!("α={alpha}: variance {var}, expected {want}"))?;
        parts.push(format!("α={alpha} mean {mean:.4} var {var:.4}/{want:.4}"));
    }
    Ok(parts.join(", "))
}

fn schedule_closed_forms() -> Outcome {
    let (lr0, e) = (1e-4, 100);
    let spec = |kind| ok(ScheduleSpec::new(kind, lr0, e));
    let (s1, s2, cos) = (spec(ScheduleKind::Step1)?, spec(ScheduleKind::Step2)?, spec(ScheduleKind::Cosine)?);
    for epoch in 0..e {
        let want1 = if epoch < 25 { lr0 } else { lr0 / 10.0 };
        let want2 = lr0 * 0.6f64.powi((epoch / 25) as i32);
        let t = epoch as f64 / 99.0;
        let wantc = lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        for (name, s, want) in [("step1", &s1, want1), ("step2", &s2, want2), ("cosine", &cos, wantc)] {
            let got = ok(lr_at(s, epoch))?;
            ensure(got == want, || format!("{name} epoch {epoch}: {got} vs {want}"))?;
        }
    }
    let last = ok(lr_at(&s2, 99))?;
    ensure((last - lr0 * 0.216).abs() <= 1e-18, || format!("step2 epoch 99 = {last}"))?;
    let (before, after) = (ok(lr_at(&s1, 24))?, ok(lr_at(&s1, 25))?);
    ensure(before == 1e-4 && (after - 1e-5).abs() <= 1e-20, || format!("step1 drop {before} -> {after}"))?;
    Ok(format!("step2[99] = {last:e}, step1[25] = {after:e}"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng::from_seed(105);
    let labels = |r: &mut rng::Rng, n: usize, k: usize| loop {
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        if (0..k).all(|c| y.contains(&c)) {
            return y;
        }
    };
    let (mut kappa_gap, mut auc_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let k = r.random_range(2..=5);
        let n = r.random_range(k..=500);
        let t = labels(&mut r, n, k);
        let p: Vec<usize> = t.iter().map(|&c| if r.random::<f64>() < 0.6 { c } else { r.random_range(0..k) }).collect();
        let got = ok(quadratic_weighted_kappa(&t, &p, k))?;
        kappa_gap = kappa_gap.max((got - kappa_pairwise(&t, &p, k, true)).abs());
    }
    for trial in 0..100 {
        let k = r.random_range(2..=4);
        let n = r.random_range(k..=500);
        let t = labels(&mut r, n, k);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> =
                    (0..k).map(|_| if trial % 2 == 0 { r.random_range(1..4) as f64 } else { r.random::<f64>() + 1e-3 }).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let got = ok(ovr_auc(&t, &probs))?;
        auc_gap = auc_gap.max((got - macro_auc_all_pairs(&t, &probs)).abs());
    }
    ensure(kappa_gap <= 1e-9, || format!("Kappa gap {kappa_gap:e}"))?;
    ensure(auc_gap <= 1e-9, || format!("AUC gap {auc_gap:e}"))?;
    Ok(format!("Kappa gap {kappa_gap:.1e}, AUC gap {auc_gap:.1e}"))
}

fn leaderboard_composition(bin: &Path) -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let root = tmp.path();
    let (h, w, g) = (200, 200, 20_000);
    for d in ["gt/images", "gt/masks/IRMA", "gt/masks/NPA", "gt/masks/NV", "pred/IRMA", "pred/NPA", "pred/NV"] {
        ok(std::fs::create_dir_all(root.join(d)))?;
    }
    ok(ImageArray::filled(h, w, 1, 0.5).save(&root.join("gt/images/case0.png")))?;
    for (lesion, d) in [("IRMA", 0.4257), ("NPA", 0.6414), ("NV", 0.5803)] {
        // 2a / (a + g) = d
        let a = (d * g as f64 / (2.0 - d)).round() as usize;
        ok(BinaryMask::from_fn(h, w, |r, c| r * w + c < g).save(&root.join(format!("gt/masks/{lesion}/case0.png"))))?;
        ok(BinaryMask::from_fn(h, w, |r, c| r * w + c < a).save(&root.join(format!("pred/{lesion}/case0.png"))))?;
    }
    ok(load_seg_manifest(&root.join("gt")))?;
    run(bin, root, &["evaluate", "--task", "seg", "--pred", "pred", "--gt", "gt", "--out", "eval.kv"])?;
    let kv = read_kv(&root.join("eval.kv"))?;
    let mdice = num(&kv, "mdice")?;
    ensure((mdice - 0.5491).abs() <= 5e-5, || format!("mDice {mdice}"))?;
    Ok(format!("mDice {mdice:.5}"))
}

fn build(task: Task, arch: &str, outputs: usize, seed: u64) -> Result<Model, String> {
    let spec = ok(ModelSpec::new(task, arch, outputs))?.with_input_size(16);
    ok(Registry::default().build(&spec, seed))
}

fn ensemble_algebra() -> Outcome {
    let mut r = rng::from_seed(107);
    let img = ImageArray::from_fn(16, 16, 3, |_, _, _| r.random::<f64>());
    let weights = [0.5, 0.2, 0.3];
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut cls = Vec::new();
    let mut seg = Vec::new();
    for order in orders {
        let members = order.iter().map(|&i| build(Task::Classification, "tiny_cnn", 3, 10 + i)).collect::<Result<_, _>>()?;
        let ens = ok(Ensemble::new(members, order.iter().map(|&i| weights[i as usize]).collect(), vec![None; 3]))?;
        cls.push(ok(predict_cls(&ens, &img, 4))?);
        let members = order.iter().map(|&i| build(Task::Segmentation, "tiny_unet", 1, 20 + i)).collect::<Result<_, _>>()?;
        seg.push(ok(predict_seg(&ok(Ensemble::uniform(members))?, &img, 4, 0.5))?);
    }
    ensure(cls.windows(2).all(|w| w[0] == w[1]), || "classification ensemble depends on member order".into())?;
    ensure(seg.windows(2).all(|w| w[0] == w[1]), || "segmentation ensemble depends on member order".into())?;

    let max_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let m = build(Task::Classification, "tiny_cnn", 3, 7)?;
    let plain = ok(m.predict_proba(&img))?;
    let tta = max_gap(&plain, &ok(model_proba_tta(&m, &img, 1))?);
    let Prediction::Classification { probs, .. } = ok(predict_cls(&ok(Ensemble::uniform(vec![m]))?, &img, 1))? else {
        return Err("expected a classification prediction".into());
    };
    let single = max_gap(&plain, &probs);
    let s = build(Task::Segmentation, "tiny_unet", 1, 8)?;
    let plain = ok(s.predict_mask(&img))?;
    let tta_seg = max_gap(plain.values(), ok(model_mask_tta(&s, &img, 1))?.values());
    let Prediction::Segmentation { probs, .. } = ok(predict_seg(&ok(Ensemble::uniform(vec![s]))?, &img, 1, 0.5))? else {
        return Err("expected a segmentation prediction".into());
    };
    let single_seg = max_gap(plain.values(), probs.values());
    ensure(single.max(single_seg) <= 1e-9, || format!("single-member gap {:e}", single.max(single_seg)))?;
    ensure(tta.max(tta_seg) <= 1e-6, || format!("TTA t=1 gap {:e}", tta.max(tta_seg)))?;
    Ok(format!("6 orders exact, single gap {:.1e}, t=1 gap {:.1e}", single.max(single_seg), tta.max(tta_seg)))
}

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn grad_gap(analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    (0..x.len()).map(|i| rel_err(analytic[i], central_diff(f, x, i, H))).fold(0.0, f64::max)
}

type SegLoss = fn(&[ProbMask], &[BinaryMask]) -> deepocta::Result<LossValue>;
type SegGrad = fn(&[ProbMask], &[BinaryMask]) -> deepocta::Result<Vec<Vec<f64>>>;

fn gradient_checks() -> Outcome {
    let mut r = rng::from_seed(108);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let seg: [(&str, SegLoss, SegGrad); 2] = [("dice", dice_loss, dice_loss_grad), ("jaccard", jaccard_loss, jaccard_loss_grad)];
    for (name, loss, grad) in seg {
        let mut gap: f64 = 0.0;
        for _ in 0..5 {
            let n = r.random_range(1..=3);
            let (h, w) = (r.random_range(2..=4), r.random_range(2..=4));
            let gts: Vec<BinaryMask> = (0..n).map(|_| BinaryMask::from_fn(h, w, |_, _| r.random::<bool>())).collect();
            let flat: Vec<f64> = (0..n * h * w).map(|_| r.random_range(0.05..0.95)).collect();
            let masks = |x: &[f64]| -> Vec<ProbMask> { x.chunks(h * w).map(|c| ProbMask::new(h, w, c.to_vec()).unwrap()).collect() };
            let analytic = ok(grad(&masks(&flat), &gts))?.concat();
            gap = gap.max(grad_gap(&analytic, &|x| loss(&masks(x), &gts).unwrap().value, &flat));
        }
        worst.push((name, gap));
    }

    let mut gap: f64 = 0.0;
    for _ in 0..5 {
        let k = r.random_range(2..=5);
        let z: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
        let t = onehot(k, r.random_range(0..k));
        gap = gap.max(grad_gap(&cross_entropy_logit_grad(&z, &t), &|x| cross_entropy(&softmax(x), &t), &z));
    }
    worst.push(("CE", gap));

    let mut gap: f64 = 0.0;
    for _ in 0..5 {
        let (k, n) = (r.random_range(2..=5), r.random_range(1..=4));
        let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let lam = r.random::<f64>();
                let mut y = vec![0.0; k];
                y[r.random_range(0..k)] += lam;
                y[r.random_range(0..k)] += 1.0 - lam;
                y
            })
            .collect();
        let analytic = ok(mix_loss_logit_grad(&logits, &labels, 0.1))?.concat();
        let f = |x: &[f64]| mix_loss(&x.chunks(k).map(softmax).collect::<Vec<_>>(), &labels, 0.1).unwrap().value;
        gap = gap.max(grad_gap(&analytic, &f, &logits.concat()));
    }
    worst.push(("mix", gap));

    for &(name, gap) in &worst {
        ensure(gap < TOL, || format!("{name} relative error {gap:e}"))?;
    }
    Ok(worst.iter().map(|(n, g)| format!("{n} {g:.1e}")).collect::<Vec<_>>().join(", "))
}

fn run(bin: &Path, cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = ok(Command::new(bin).args(args).current_dir(cwd).env_remove("DEEPOCTA_RUNS_DIR").output())?;
    if !out.status.success() {
        return Err(format!("`deepocta {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_kv(path: &Path) -> Result<HashMap<String, String>, String> {
    ok(parse_kv(&read(path)?, &path.display().to_string()))
}

fn num(kv: &HashMap<String, String>, key: &str) -> Result<f64, String> {
    kv.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| format!("no numeric `{key}`"))
}

struct Smoke {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    seg_secs: f64,
    cls_secs: f64,
    first_loss: f64,
    last_loss: f64,
    val_dice: f64,
    mdice: f64,
    kappa: f64,
}

impl Smoke {
    fn file(&self, rel: &str) -> Result<String, String> {
        read(&self.root.join(rel))
    }
}

fn smoke(bin: &Path) -> Result<Smoke, String> {
    let dir = ok(tempfile::tempdir())?;
    let root = dir.path().to_path_buf();
    let t = Instant::now();
    run(bin, &root, &["synth", "--out", "data", "--n", "60", "--size", "64", "--seed", "1"])?;
    run(bin, &root, &["split", "--data", "data", "--k", "2", "--seed", "1"])?;
    run(
        bin,
        &root,
        &[
            "train-seg", "--data", "data", "--name", "seg", "--lesion", "NPA", "--arch", "tiny_unet", "--input-size",
            "64", "--epochs", "5", "--batch-size", "2", "--lr0", "3e-3", "--seed", "1",
        ],
    )?;
    run(bin, &root, &["predict", "--ensemble", "runs/seg", "--input", "data", "--out", "pred"])?;
    run(bin, &root, &["evaluate", "--task", "seg", "--pred", "pred", "--gt", "data", "--out", "seg_eval.kv"])?;
    let seg_secs = t.elapsed().as_secs_f64();
    let log = ok(parse_log_csv(&read(&root.join("runs/seg/fold0/log.csv"))?, "log.csv"))?;
    let (first, last) = match (log.first(), log.last()) {
        (Some(f), Some(l)) => (f.train_loss, l.train_loss),
        _ => return Err("empty segmentation log".into()),
    };
    let val_dice = log.iter().map(|e| e.val_metric).fold(f64::NEG_INFINITY, f64::max);
    let mdice = num(&read_kv(&root.join("seg_eval.kv"))?, "mdice")?;

    let t = Instant::now();
    run(
        bin,
        &root,
        &[
            "train-cls", "--data", "data", "--name", "cls", "--arch", "tiny_cnn", "--input-size", "64", "--epochs",
            "30", "--folds", "2", "--folds-file", "data/folds.csv", "--mix-prob", "0.5", "--optimizer", "sgd",
            "--lr0", "0.03", "--batch-size", "8", "--seed", "1",
        ],
    )?;
    let cls_secs = t.elapsed().as_secs_f64();
    let kappa = num(&read_kv(&root.join("runs/cls/summary.kv"))?, "mean")?;
    Ok(Smoke {
        _dir: dir,
        root,
        seg_secs,
        cls_secs,
        first_loss: first,
        last_loss: last,
        val_dice,
        mdice,
        kappa,
    })
}

const SMOKE_BUDGET: f64 = 300.0;

fn end_to_end(s: &Smoke) -> Outcome {
    ensure(s.seg_secs < SMOKE_BUDGET, || format!("segmentation pipeline took {:.0} s", s.seg_secs))?;
    ensure(s.cls_secs < SMOKE_BUDGET, || format!("classification run took {:.0} s", s.cls_secs))?;
    ensure(s.last_loss <= 0.8 * s.first_loss, || {
        format!("train loss {:.4} -> {:.4}, ratio {:.3}", s.first_loss, s.last_loss, s.last_loss / s.first_loss)
    })?;
    ensure(s.kappa > 0.8, || format!("mean val Kappa {:.4}", s.kappa))?;
    Ok(format!(
        "seg {:.0} s loss ratio {:.3} mDice {:.4}; cls {:.0} s val Kappa {:.4}",
        s.seg_secs,
        s.last_loss / s.first_loss,
        s.mdice,
        s.cls_secs,
        s.kappa
    ))
}

fn determinism(a: &Smoke, bin: &Path) -> Outcome {
    let b = smoke(bin)?;
    for rel in ["data/folds.csv", "runs/cls/folds.csv", "runs/cls/fold0/mix_log.csv", "runs/cls/fold1/mix_log.csv"] {
        ensure(a.file(rel)? == b.file(rel)?, || format!("{rel} differs between runs"))?;
    }
    let pairs = [
        ("final train loss", a.last_loss, b.last_loss),
        ("best val dice", a.val_dice, b.val_dice),
        ("mDice", a.mdice, b.mdice),
        ("mean val Kappa", a.kappa, b.kappa),
    ];
    let mut worst: f64 = 0.0;
    for (name, x, y) in pairs {
        ensure((x - y).abs() <= 1e-6, || format!("{name}: {x} vs {y}"))?;
        worst = worst.max((x - y).abs());
    }
    let mixes = a.file("runs/cls/fold0/mix_log.csv")?.lines().count() - 1;
    Ok(format!("fold and mix logs identical ({mixes} fold-0 mix rows), metric gap {worst:.1e}"))
}

fn report(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut res = f();
    let took = t.elapsed();
    if let (Ok(_), Some(b)) = (&res, budget) {
        if took > b {
            res = Err(format!("over the {} s budget", b.as_secs()));
        }
    }
    let secs = took.as_secs_f64();
    match &res {
        Ok(detail) => println!("PASS {id:>2} {name} ({secs:.2} s): {detail}"),
        Err(why) => println!("FAIL {id:>2} {name} ({secs:.2} s): {why}"),
    }
    res.is_ok()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let bin = Path::new(env!("CARGO_BIN_EXE_deepocta"));
    let secs = |s| Some(Duration::from_secs(s));
    let mut results = vec![
        report(1, "loss oracles", secs(5), loss_oracles),
        report(2, "mix correctness", secs(60), mix_correctness),
        report(3, "beta sampling", secs(10), beta_sampling),
        report(4, "schedule closed forms", None, schedule_closed_forms),
        report(5, "metric oracles", secs(30), metric_oracles),
        report(6, "leaderboard composition", None, || leaderboard_composition(bin)),
        report(7, "ensemble and TTA algebra", None, ensemble_algebra),
        report(8, "gradient checks", None, gradient_checks),
    ];
    let first = smoke(bin);
    results.push(report(9, "end-to-end smoke", None, || end_to_end(first.as_ref()?)));
    results.push(report(10, "determinism", None, || determinism(first.as_ref()?, bin)));
    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
