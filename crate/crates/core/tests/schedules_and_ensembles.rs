use deepocta::augment::tta_expand;
use deepocta::inference::{model_mask_tta, model_proba_tta, predict_cls, predict_seg, Ensemble, Prediction};
use deepocta::model_zoo::{Model, ModelSpec, Registry, Task};
use deepocta::schedules::{lr_at, ScheduleKind, ScheduleSpec};
use deepocta::{rng, ImageArray};
use rand::Rng as _;

#[test]
fn schedule_closed_forms_over_100_epochs() {
    let lr0 = 1e-4;
    let e = 100;
    for epoch in 0..e {
        let s1 = lr_at(&ScheduleSpec::new(ScheduleKind::Step1, lr0, e).unwrap(), epoch).unwrap();
        assert_eq!(s1, if epoch < 25 { lr0 } else { lr0 / 10.0 });
        let s2 = lr_at(&ScheduleSpec::new(ScheduleKind::Step2, lr0, e).unwrap(), epoch).unwrap();
        assert_eq!(s2, lr0 * 0.6f64.powi((epoch / 25) as i32));
        let c = lr_at(&ScheduleSpec::new(ScheduleKind::Cosine, lr0, e).unwrap(), epoch).unwrap();
        let t = epoch as f64 / 99.0;
        assert_eq!(c, lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
    }
    let step2 = ScheduleSpec::new(ScheduleKind::Step2, lr0, e).unwrap();
    assert!((lr_at(&step2, 99).unwrap() - lr0 * 0.216).abs() < 1e-18);
    let step1 = ScheduleSpec::new(ScheduleKind::Step1, lr0, e).unwrap();
    assert_eq!(lr_at(&step1, 24).unwrap(), 1e-4);
    assert!((lr_at(&step1, 25).unwrap() - 1e-5).abs() < 1e-20);
    let cos = ScheduleSpec::new(ScheduleKind::Cosine, lr0, e).unwrap();
    assert_eq!(lr_at(&cos, 0).unwrap(), lr0);
    assert!(lr_at(&cos, 99).unwrap().abs() < 1e-20);
}

#[test]
fn schedule_value_counts() {
    for e in [4, 8, 40, 100] {
        let distinct = |kind| {
            let spec = ScheduleSpec::new(kind, 0.1, e).unwrap();
            let mut v: Vec<u64> = (0..e).map(|i| lr_at(&spec, i).unwrap().to_bits()).collect();
            v.dedup();
            v.len()
        };
        assert_eq!(distinct(ScheduleKind::Step1), 2);
        assert_eq!(distinct(ScheduleKind::Step2), 4);
    }
}

fn models(task: Task, arch: &str, outputs: usize, seeds: &[u64]) -> Vec<Model> {
    let spec = ModelSpec::new(task, arch, outputs).unwrap().with_input_size(16);
    seeds.iter().map(|&s| Registry::default().build(&spec, s).unwrap()).collect()
}

fn image(seed: u64) -> ImageArray {
    let mut r = rng::from_seed(seed);
    ImageArray::from_fn(16, 16, 3, |_, _, _| r.random::<f64>())
}

#[test]
fn ensemble_is_invariant_to_member_order() {
    let img = image(1);
    let weights = [0.5, 0.2, 0.3];
    let orders = [[0, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
    let mut outputs = Vec::new();
    for order in orders {
        let ms = models(Task::Classification, "tiny_cnn", 3, &order.map(|i| 10 + i as u64));
        let ens = Ensemble::new(ms, order.map(|i| weights[i]).to_vec(), vec![None; 3]).unwrap();
        outputs.push(predict_cls(&ens, &img, 2).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let Prediction::Classification { probs, class } = &outputs[0] else { panic!() };
    assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert_eq!(*class, deepocta::inference::argmax(probs));

    let mut masks = Vec::new();
    for order in orders {
        let ms = models(Task::Segmentation, "tiny_unet", 1, &order.map(|i| 20 + i as u64));
        let ens = Ensemble::uniform(ms).unwrap();
        masks.push(predict_seg(&ens, &img, 3, 0.5).unwrap());
    }
    assert!(masks.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn single_member_and_tta_identity() {
    let img = image(2);
    let m = models(Task::Classification, "tiny_cnn", 3, &[7]).remove(0);
    let plain = m.predict_proba(&img).unwrap();
    let t1 = model_proba_tta(&m, &img, 1).unwrap();
    for (a, b) in plain.iter().zip(&t1) {
        assert!((a - b).abs() <= 1e-6);
    }
    let ens = Ensemble::uniform(vec![m]).unwrap();
    let Prediction::Classification { probs, .. } = predict_cls(&ens, &img, 1).unwrap() else { panic!() };
    for (a, b) in plain.iter().zip(&probs) {
        assert!((a - b).abs() <= 1e-9);
    }

    let s = models(Task::Segmentation, "tiny_unet", 1, &[8]).remove(0);
    let plain = s.predict_mask(&img).unwrap();
    let t1 = model_mask_tta(&s, &img, 1).unwrap();
    for (a, b) in plain.values().iter().zip(t1.values()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let ens = Ensemble::uniform(vec![s]).unwrap();
    let Prediction::Segmentation { probs, mask } = predict_seg(&ens, &img, 1, 0.5).unwrap() else { panic!() };
    for (i, (a, b)) in plain.values().iter().zip(probs.values()).enumerate() {
        assert!((a - b).abs() <= 1e-9);
        assert_eq!(mask.data()[i], *b >= 0.5);
    }
}

#[test]
fn weight_scaling_keeps_argmax() {
    for seed in 0..5 {
        let img = image(100 + seed);
        let w = [0.2, 1.3, 0.7];
        let mut classes = Vec::new();
        for scale in [1.0, 0.01, 250.0] {
            let ms = models(Task::Classification, "tiny_cnn", 3, &[1, 2, 3]);
            let ens = Ensemble::new(ms, w.map(|x| x * scale).to_vec(), vec![None; 3]).unwrap();
            classes.push(predict_cls(&ens, &img, 1).unwrap().class());
        }
        assert!(classes.windows(2).all(|c| c[0] == c[1]));
    }
}

#[test]
fn tta_views_are_distinct_dihedral_images() {
    let img = image(3);
    let views = tta_expand(&img, 8).unwrap();
    assert_eq!(views[0], img);
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(views[i], views[j]);
        }
    }
}
