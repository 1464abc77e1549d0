//! Loss terms. Each returns its value together with the gradient with
//! respect to its inputs, one vector per sample.

use crate::encode::LeaderSet;
use crate::error::{Error, Result};
use crate::types::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

impl LossGrad {
    fn zero(shape: &[Vec<f64>]) -> Self {
        Self {
            value: 0.0,
            grad: shape.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Supervised contrastive loss over unit projections with temperature `tau`.
///
/// For anchor `i` with positives `P(i)` (other rows sharing its label) the
/// term is `-(1/|P(i)|) Σ_p log softmax_{j≠i}(z_i·z_j/τ)[p]`. The loss is the
/// mean over anchors with a nonempty positive set; it is 0 when none has one.
/// The returned flag is `true` when at least one anchor contributed.
pub fn supervised_contrastive(projs: &[Vec<f64>], labels: &[i64], tau: f64) -> (LossGrad, bool) {
    let n = projs.len();
    let mut out = LossGrad::zero(projs);
    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    let anchors = positives.iter().filter(|&&p| p > 0).count();
    if anchors == 0 {
        return (out, false);
    }
    let scale = 1.0 / anchors as f64;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot(&projs[i], &projs[j]) / tau;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    // coefficient of s_ij in the loss, then chain through s_ij = z_i·z_j/τ
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        if positives[i] == 0 {
            continue;
        }
        let others = (0..n).filter(|&j| j != i).map(|j| sim[i * n + j]);
        let lse = log_sum_exp(others);
        let inv_p = 1.0 / positives[i] as f64;
        let mut term = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = sim[i * n + j];
            let softmax = (s - lse).exp();
            let pos = labels[j] == labels[i];
            if pos {
                term -= inv_p * (s - lse);
            }
            coef[i * n + j] += scale * (softmax - if pos { inv_p } else { 0.0 });
        }
        out.value += scale * term;
    }
    for i in 0..n {
        for j in 0..n {
            let c = coef[i * n + j];
            if c == 0.0 {
                continue;
            }
            for (d, (&pi, &pj)) in projs[i].iter().zip(&projs[j]).enumerate() {
                out.grad[i][d] += c * pj / tau;
                out.grad[j][d] += c * pi / tau;
            }
        }
    }
    (out, true)
}

/// `-mean |h|` over every sample and bit. Pushes bounded hash outputs
/// towards ±1.
pub fn hash_regularizer(hashes: &[Vec<f64>]) -> LossGrad {
    let count: usize = hashes.iter().map(Vec::len).sum();
    let mut out = LossGrad::zero(hashes);
    if count == 0 {
        return out;
    }
    let inv = 1.0 / count as f64;
    for (h, g) in hashes.iter().zip(out.grad.iter_mut()) {
        for (x, gx) in h.iter().zip(g.iter_mut()) {
            out.value -= x.abs() * inv;
            // subgradient 0 at the kink
            *gx = if *x == 0.0 { 0.0 } else { -x.signum() * inv };
        }
    }
    out
}

/// Leader contrast on features: for each sample,
/// `-log( exp(f·l_y/τ) / Σ_{m≠y} exp(f·l_m/τ) )`, averaged over the batch.
/// The positive leader is excluded from the denominator. Leaders are
/// constants here.
///
/// Fails with `MissingLeader` if a label has no leader, or if the set has a
/// single leader (the denominator would be empty).
pub fn leader_contrast(
    features: &[Vec<f64>],
    labels: &[i64],
    leaders: &LeaderSet,
    tau: f64,
) -> Result<LossGrad> {
    let mut out = LossGrad::zero(features);
    if features.is_empty() {
        return Ok(out);
    }
    let m = leaders.len();
    let inv_b = 1.0 / features.len() as f64;
    for (n, (f, &y)) in features.iter().zip(labels).enumerate() {
        let yi = leaders.index_of(y).ok_or(Error::MissingLeader(y))?;
        if m < 2 {
            return Err(Error::MissingLeader(y));
        }
        let logits: Vec<f64> = leaders
            .leaders
            .iter_rows()
            .map(|l| dot(f, l) / tau)
            .collect();
        let negatives = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != yi)
            .map(|(_, &v)| v);
        let lse = log_sum_exp(negatives);
        out.value += inv_b * (lse - logits[yi]);
        let g = &mut out.grad[n];
        for (k, l) in leaders.leaders.iter_rows().enumerate() {
            let w = if k == yi {
                -1.0
            } else {
                (logits[k] - lse).exp()
            };
            for (gd, ld) in g.iter_mut().zip(l) {
                *gd += inv_b * w * ld / tau;
            }
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy; `targets` are class indices.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<LossGrad> {
    let mut out = LossGrad::zero(logits);
    if logits.is_empty() {
        return Ok(out);
    }
    let inv_b = 1.0 / logits.len() as f64;
    for (n, (z, &t)) in logits.iter().zip(targets).enumerate() {
        if t >= z.len() {
            return Err(Error::LabelOutOfRange {
                label: t as i64,
                classes: z.len(),
            });
        }
        let lse = log_sum_exp(z.iter().copied());
        out.value += inv_b * (lse - z[t]);
        for (k, (g, &v)) in out.grad[n].iter_mut().zip(z).enumerate() {
            *g = inv_b * ((v - lse).exp() - if k == t { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EmbeddingMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Scalar reference implementations, written straight from the formulas.

    fn supcon_oracle(z: &[Vec<f64>], y: &[i64], tau: f64) -> f64 {
        let n = z.len();
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let pos: Vec<usize> = (0..n).filter(|&p| p != i && y[p] == y[i]).collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1;
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(&z[i], &z[j]) / tau).exp())
                .sum();
            let mut li = 0.0;
            for &p in &pos {
                li -= ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
            }
            total += li / pos.len() as f64;
        }
        if anchors == 0 {
            0.0
        } else {
            total / anchors as f64
        }
    }

    fn sle_oracle(f: &[Vec<f64>], y: &[i64], leaders: &LeaderSet, tau: f64) -> f64 {
        let mut total = 0.0;
        for (x, &label) in f.iter().zip(y) {
            let yi = leaders.index_of(label).unwrap();
            let num = (dot(x, leaders.leaders.row(yi)) / tau).exp();
            let den: f64 = (0..leaders.len())
                .filter(|&m| m != yi)
                .map(|m| (dot(x, leaders.leaders.row(m)) / tau).exp())
                .sum();
            total += -(num / den).ln();
        }
        total / f.len() as f64
    }

    fn ce_oracle(z: &[Vec<f64>], t: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, &k) in z.iter().zip(t) {
            let den: f64 = row.iter().map(|v| v.exp()).sum();
            total -= (row[k].exp() / den).ln();
        }
        total / z.len() as f64
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        crate::types::l2_normalize(&v).unwrap()
    }

    fn leaders(rows: Vec<Vec<f64>>, labels: Vec<i64>) -> LeaderSet {
        let dim = rows[0].len();
        LeaderSet {
            leaders: EmbeddingMatrix::from_rows(dim, &rows).unwrap(),
            known_mask: vec![true; labels.len()],
            labels,
            delta_max: 0.0,
        }
    }

    fn fd_check(inputs: &[Vec<f64>], grad: &[Vec<f64>], f: impl Fn(&[Vec<f64>]) -> f64) {
        let h = 1e-6;
        for i in 0..inputs.len() {
            for d in 0..inputs[i].len() {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[i][d] += h;
                minus[i][d] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(
                    (fd - grad[i][d]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "input {i},{d}: fd {fd} vs analytic {}",
                    grad[i][d]
                );
            }
        }
    }

    #[test]
    fn supcon_identical_pair_is_zero() {
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let (l, any) = supervised_contrastive(&z, &[3, 3], 0.05);
        assert!(any);
        assert!(l.value.abs() < 1e-12);
    }

    #[test]
    fn supcon_no_positives() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let (l, any) = supervised_contrastive(&z, &[0, 1, 2], 0.05);
        assert!(!any);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn supcon_matches_oracle_and_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<Vec<f64>> = (0..4).map(|_| unit(&mut rng, 3)).collect();
        let y = [0, 1, 0, 1];
        let (l, _) = supervised_contrastive(&z, &y, 0.5);
        assert!((l.value - supcon_oracle(&z, &y, 0.5)).abs() < 1e-12);
        fd_check(&z, &l.grad, |zz| supcon_oracle(zz, &y, 0.5));
    }

    #[test]
    fn reg_examples() {
        assert_eq!(hash_regularizer(&[vec![0.0; 4]]).value, 0.0);
        let l = hash_regularizer(&[vec![0.5, -0.5], vec![-0.5, 0.5]]);
        assert!((l.value + 0.5).abs() < 1e-15);
        let h = vec![vec![0.1, -0.7, 0.3], vec![0.9, -0.2, 0.05]];
        let l = hash_regularizer(&h);
        let oracle: f64 = -h.iter().flatten().map(|x| x.abs()).sum::<f64>() / 6.0;
        assert!((l.value - oracle).abs() < 1e-15);
        fd_check(&h, &l.grad, |hh| {
            -hh.iter().flatten().map(|x| x.abs()).sum::<f64>() / 6.0
        });
    }

    #[test]
    fn sle_hand_example() {
        let ls = leaders(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        let l = leader_contrast(&[vec![1.0, 0.0]], &[0], &ls, 1.0).unwrap();
        assert!((l.value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn sle_single_leader_and_missing() {
        let one = leaders(vec![vec![1.0, 0.0]], vec![0]);
        assert!(matches!(
            leader_contrast(&[vec![1.0, 0.0]], &[0], &one, 1.0),
            Err(Error::MissingLeader(0))
        ));
        let two = leaders(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        assert!(matches!(
            leader_contrast(&[vec![1.0, 0.0]], &[4], &two, 1.0),
            Err(Error::MissingLeader(4))
        ));
    }

    #[test]
    fn sle_matches_oracle_and_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ls = leaders((0..3).map(|_| unit(&mut rng, 4)).collect(), vec![0, 2, 9]);
        let f: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 4)).collect();
        let y = [0, 2, 9, 9, 0];
        let l = leader_contrast(&f, &y, &ls, 0.3).unwrap();
        assert!((l.value - sle_oracle(&f, &y, &ls, 0.3)).abs() < 1e-12);
        fd_check(&f, &l.grad, |ff| sle_oracle(ff, &y, &ls, 0.3));
    }

    #[test]
    fn sle_invariant_to_leader_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng, 3)).collect();
        let a = leaders(rows.clone(), vec![0, 1, 2]);
        // same leaders, relabeled so row order differs
        let b = leaders(vec![rows[2].clone(), rows[0].clone(), rows[1].clone()], vec![0, 1, 2]);
        let f: Vec<Vec<f64>> = (0..4).map(|_| unit(&mut rng, 3)).collect();
        let ya = [0, 1, 2, 1];
        let yb = [1, 2, 0, 2];
        let la = leader_contrast(&f, &ya, &a, 0.05).unwrap().value;
        let lb = leader_contrast(&f, &yb, &b, 0.05).unwrap().value;
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn ce_examples() {
        let l = cross_entropy(&[vec![0.3; 4]], &[2]).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
        assert!((l.value - 1.386294).abs() < 1e-6);
        let l = cross_entropy(&[vec![100.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(l.value < 1e-40);
        assert!(matches!(
            cross_entropy(&[vec![0.0, 0.0]], &[2]),
            Err(Error::LabelOutOfRange { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let t = [1, 3, 0];
        let l = cross_entropy(&z, &t).unwrap();
        assert!((l.value - ce_oracle(&z, &t)).abs() < 1e-12);
        fd_check(&z, &l.grad, |zz| ce_oracle(zz, &t));
    }
}
