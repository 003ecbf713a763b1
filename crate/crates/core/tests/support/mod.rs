//! Brute-force reference implementations. Deliberately naive: nothing here
//! calls into the library's metric code.

#![allow(dead_code)]

/// Weighted Kappa via pairwise sums:
/// Σ_n w(t_n, p_n) observed, (1/N)·Σ_n Σ_m w(t_n, p_m) expected.
pub fn kappa_pairwise(y_true: &[usize], y_pred: &[usize], k: usize, quadratic: bool) -> f64 {
    let w = |i: usize, j: usize| {
        let d = (i as f64 - j as f64).abs() / (k - 1) as f64;
        if quadratic {
            d * d
        } else {
            d
        }
    };
    let n = y_true.len() as f64;
    let observed: f64 = y_true.iter().zip(y_pred).map(|(&t, &p)| w(t, p)).sum();
    let mut expected = 0.0;
    for &t in y_true {
        for &p in y_pred {
            expected += w(t, p);
        }
    }
    1.0 - observed / (expected / n)
}

/// One-vs-rest AUC by counting every positive/negative pair, ties as ½.
pub fn auc_all_pairs(y_true: &[usize], probs: &[Vec<f64>], class: usize) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, pi) in probs.iter().enumerate() {
        if y_true[i] != class {
            continue;
        }
        for (j, pj) in probs.iter().enumerate() {
            if y_true[j] == class {
                continue;
            }
            pairs += 1.0;
            if pi[class] > pj[class] {
                wins += 1.0;
            } else if pi[class] == pj[class] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Unweighted mean of the defined per-class AUCs.
pub fn macro_auc_all_pairs(y_true: &[usize], probs: &[Vec<f64>]) -> f64 {
    let k = probs[0].len();
    let vals: Vec<f64> = (0..k).filter_map(|c| auc_all_pairs(y_true, probs, c)).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Mean and population variance.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
