//! Clustering accuracy under one optimal label mapping, and the synthetic
//! spherical benchmark generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::assignment::hungarian;
use crate::error::{Error, Result};
use crate::types::{
    dot, l2_normalize, EmbeddingMatrix, LabelSpace, LabeledDataset, RngSeed, SourceTag, Stream,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub n_all: usize,
    pub n_old: usize,
    pub n_new: usize,
    /// Predicted label to true label, for every matched predicted label.
    pub mapping: BTreeMap<i64, i64>,
}

impl AccReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_key_values(&self) -> String {
        format!(
            "acc_all={:.6}\nacc_old={:.6}\nacc_new={:.6}\nn_all={}\nn_old={}\nn_new={}\n",
            self.acc_all, self.acc_old, self.acc_new, self.n_all, self.n_old, self.n_new
        )
    }
}

/// Clustering accuracy. The predicted-to-true mapping maximizing agreement
/// over all samples is found once and used to score the old (true label in
/// `old_labels`) and new subsets too. An empty subset scores 0.
pub fn acc(y_true: &[i64], y_pred: &[i64], old_labels: &BTreeSet<i64>) -> Result<AccReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds: Vec<i64> = y_pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let truths: Vec<i64> = y_true.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let (r, c) = (preds.len(), truths.len());
    let mut count = vec![0.0; r * c];
    for (t, p) in y_true.iter().zip(y_pred) {
        let i = preds.binary_search(p).expect("collected");
        let j = truths.binary_search(t).expect("collected");
        count[i * c + j] += 1.0;
    }
    // hungarian handles the rectangular case; unmatched rows score zero
    let negated: Vec<f64> = count.iter().map(|x| -x).collect();
    let matching = hungarian(&negated, r, c)?;
    let mapping: BTreeMap<i64, i64> = matching
        .pairs()
        .map(|(i, j)| (preds[i], truths[j]))
        .collect();

    let (mut hit_all, mut hit_old, mut hit_new, mut n_old, mut n_new) = (0, 0, 0, 0, 0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let hit = mapping.get(p) == Some(t);
        let old = old_labels.contains(t);
        if old {
            n_old += 1;
        } else {
            n_new += 1;
        }
        if hit {
            hit_all += 1;
            if old {
                hit_old += 1;
            } else {
                hit_new += 1;
            }
        }
    }
    let rate = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(AccReport {
        acc_all: rate(hit_all, y_true.len()),
        acc_old: rate(hit_old, n_old),
        acc_new: rate(hit_new, n_new),
        n_all: y_true.len(),
        n_old,
        n_new,
        mapping,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub known_categories: usize,
    pub unknown_categories: usize,
    pub samples_per_category: usize,
    /// Maximum angle, in degrees, between a sample and its category center.
    pub angular_radius: f64,
    /// Minimum pairwise angle, in degrees, between category centers.
    pub center_separation: f64,
    pub seed: RngSeed,
}

impl SyntheticSpec {
    /// 16-d, 5 known + 5 unknown categories, 40 samples each, 5° radius, 60° apart.
    pub fn easy(seed: RngSeed) -> Self {
        Self {
            dim: 16,
            known_categories: 5,
            unknown_categories: 5,
            samples_per_category: 40,
            angular_radius: 5.0,
            center_separation: 60.0,
            seed,
        }
    }

    /// 16-d, 10 known + 10 unknown categories, 40 samples each, 9° radius, 20° apart.
    pub fn hard(seed: RngSeed) -> Self {
        Self {
            dim: 16,
            known_categories: 10,
            unknown_categories: 10,
            samples_per_category: 40,
            angular_radius: 9.0,
            center_separation: 20.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be >= 2".into()));
        }
        if self.known_categories == 0 || self.samples_per_category == 0 {
            return Err(Error::InvalidConfig(
                "need at least one known category and one sample per category".into(),
            ));
        }
        if !(0.0..=180.0).contains(&self.angular_radius)
            || !(0.0..=180.0).contains(&self.center_separation)
        {
            return Err(Error::InvalidConfig("angles must lie in [0, 180] degrees".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub support: LabeledDataset,
    pub query: LabeledDataset,
    pub centers: EmbeddingMatrix,
}

const CENTER_RETRIES: usize = 10_000;

fn gaussian_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Point at angle `phi` from unit `center` along a uniformly random tangent.
fn perturb<R: Rng>(rng: &mut R, center: &[f64], phi: f64) -> Vec<f64> {
    loop {
        let g = gaussian_unit(rng, center.len());
        let along = dot(&g, center);
        let tangent: Vec<f64> = g.iter().zip(center).map(|(x, c)| x - along * c).collect();
        if let Ok(t) = l2_normalize(&tangent) {
            let (s, c) = phi.sin_cos();
            return center.iter().zip(&t).map(|(a, b)| c * a + s * b).collect();
        }
    }
}

/// Unit-sphere categories. Centers are placed by rejection sampling so every
/// pair is at least `center_separation` apart. Samples fill the cap of
/// `angular_radius` around their center with (approximately) uniform density:
/// the angle is `radius * U^(1/(dim-1))` along a uniform tangent direction. Known
/// categories `0..K` are split in half between support (first half) and
/// query; unknown categories `K..K+U` go to the query only and are listed in
/// its `virtual` label set.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = spec.seed.rng(Stream::Synthetic);
    let total = spec.known_categories + spec.unknown_categories;
    let min_cos = spec.center_separation.to_radians().cos();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(total);
    while centers.len() < total {
        let mut placed = false;
        for _ in 0..CENTER_RETRIES {
            let c = gaussian_unit(&mut rng, spec.dim);
            if centers.iter().all(|o| dot(o, &c) <= min_cos) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SeparationInfeasible(total));
        }
    }

    let radius = spec.angular_radius.to_radians();
    let half = spec.samples_per_category / 2;
    let (mut s_rows, mut s_labels) = (Vec::new(), Vec::new());
    let (mut q_rows, mut q_labels) = (Vec::new(), Vec::new());
    for (k, c) in centers.iter().enumerate() {
        let known = k < spec.known_categories;
        for n in 0..spec.samples_per_category {
            let phi = radius * rng.random::<f64>().powf(1.0 / (spec.dim - 1) as f64);
            let x = perturb(&mut rng, c, phi);
            if known && n < half {
                s_rows.push(x);
                s_labels.push(k as i64);
            } else {
                q_rows.push(x);
                q_labels.push(k as i64);
            }
        }
    }
    let known: BTreeSet<i64> = (0..spec.known_categories as i64).collect();
    let space_q = LabelSpace {
        known: known.clone(),
        virtual_: (spec.known_categories as i64..total as i64).collect(),
    };
    let n_s = s_rows.len();
    let n_q = q_rows.len();
    let support = LabeledDataset::new(
        EmbeddingMatrix::from_rows(spec.dim, &s_rows)?,
        s_labels,
        LabelSpace {
            known,
            virtual_: BTreeSet::new(),
        },
        vec![SourceTag::Support; n_s],
    )?;
    let query = LabeledDataset::new(
        EmbeddingMatrix::from_rows(spec.dim, &q_rows)?,
        q_labels,
        space_q,
        vec![SourceTag::Query; n_q],
    )?;
    Ok(SyntheticData {
        support,
        query,
        centers: EmbeddingMatrix::from_rows(spec.dim, &centers)?,
    })
}
