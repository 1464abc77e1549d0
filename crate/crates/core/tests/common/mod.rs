//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ocd_engine::encode::LeaderSet;
use ocd_engine::train::{objective, LossWeights, ModelParams, ModelShape};
use ocd_engine::EmbeddingMatrix;
use rand::Rng;

/// Visits every injective map from `0..k` into `0..n` (k <= n).
fn for_each_injection(k: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(k: usize, n: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, n, cur, used, f);
                cur.pop();
                used[j] = false;
            }
        }
    }
    rec(k, n, &mut Vec::new(), &mut vec![false; n], f);
}

/// Minimum total cost over all assignments of min(rows, cols) pairs.
pub fn brute_force_assignment(cost: &[f64], rows: usize, cols: usize) -> f64 {
    let mut best = f64::INFINITY;
    if rows <= cols {
        for_each_injection(rows, cols, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum());
        });
    } else {
        for_each_injection(cols, rows, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(j, &i)| cost[i * cols + j]).sum());
        });
    }
    if rows == 0 || cols == 0 {
        0.0
    } else {
        best
    }
}

/// Largest number of samples agreeing under any one-to-one mapping of
/// predicted labels to true labels.
pub fn brute_force_agreement(y_true: &[i64], y_pred: &[i64]) -> usize {
    let preds: Vec<i64> = y_pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let truths: Vec<i64> = y_true.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (t, p) in y_true.iter().zip(y_pred) {
        let key = (
            preds.binary_search(p).unwrap(),
            truths.binary_search(t).unwrap(),
        );
        *count.entry(key).or_default() += 1;
    }
    let score = |pairs: &mut dyn Iterator<Item = (usize, usize)>| -> usize {
        pairs.map(|k| count.get(&k).copied().unwrap_or(0)).sum()
    };
    let mut best = 0;
    if preds.len() <= truths.len() {
        for_each_injection(preds.len(), truths.len(), &mut |m| {
            best = best.max(score(&mut m.iter().enumerate().map(|(i, &j)| (i, j))));
        });
    } else {
        for_each_injection(truths.len(), preds.len(), &mut |m| {
            best = best.max(score(&mut m.iter().enumerate().map(|(j, &i)| (i, j))));
        });
    }
    best
}

pub fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A small random model, batch and constant leader set for gradient checks.
pub struct GradInstance {
    pub params: ModelParams,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub leaders: LeaderSet,
    pub tau: f64,
}

pub fn grad_instance<R: Rng>(rng: &mut R) -> GradInstance {
    let d = rng.random_range(2..=8);
    let classes = rng.random_range(2..=3usize);
    let shape = ModelShape {
        input_dim: d,
        proj_dim: rng.random_range(2..=5),
        hash_bits: rng.random_range(2..=6),
    };
    let class_labels: Vec<i64> = (0..classes as i64).collect();
    let mut params = ModelParams::init(shape, class_labels.clone(), rng);
    // move away from the identity adapter so every block is generic
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch = rng.random_range(4..=8usize);
    let labels: Vec<i64> = (0..batch).map(|i| (i % classes) as i64).collect();
    let inputs = (0..batch)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let leaders = LeaderSet {
        leaders: EmbeddingMatrix::from_rows(d, &rows).unwrap(),
        labels: class_labels,
        delta_max: 1.0,
        known_mask: vec![true; classes],
    };
    GradInstance {
        params,
        inputs,
        labels,
        leaders,
        tau: rng.random_range(0.1..1.0),
    }
}

/// Norm-wise relative error between the analytic parameter gradient and
/// central finite differences of the objective with step `h`.
pub fn grad_check(inst: &GradInstance, w: LossWeights, h: f64) -> f64 {
    let inputs: Vec<&[f64]> = inst.inputs.iter().map(|v| v.as_slice()).collect();
    let eval = |p: &ModelParams| {
        objective(p, &inputs, &inst.labels, &inst.leaders, inst.tau, w)
            .unwrap()
            .0
            .total
    };
    let (_, grads) = objective(&inst.params, &inputs, &inst.labels, &inst.leaders, inst.tau, w).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut p = inst.params.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|(_, t)| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = p.tensors()[ti].1[k];
            p.tensors_mut()[ti].1[k] = orig + h;
            let up = eval(&p);
            p.tensors_mut()[ti].1[k] = orig - h;
            let down = eval(&p);
            p.tensors_mut()[ti].1[k] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
