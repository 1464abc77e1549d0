//! Attribute composition at the embedding level: cross-category pair
//! sampling and spherical interpolation of the paired embeddings.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    dot, norm, EmbeddingMatrix, LabeledDataset, RngSeed, SourceTag, Stream, UNLABELED,
};

const PARALLEL_EPS: f64 = 1e-6;

/// Named interpolation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Space {
    Textual,
    Visual,
    Latent,
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textual" => Ok(Space::Textual),
            "visual" => Ok(Space::Visual),
            "latent" => Ok(Space::Latent),
            other => Err(Error::InvalidConfig(format!("unknown space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationConfig {
    pub lambda_t: f64,
    pub lambda_v: f64,
    pub lambda_l: f64,
    /// Space whose interpolation becomes the stored synthetic embedding.
    pub primary: Space,
    pub pairs_per_epoch: usize,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        Self {
            lambda_t: 0.7,
            lambda_v: 0.7,
            lambda_l: 0.8,
            primary: Space::Latent,
            pairs_per_epoch: 200,
        }
    }
}

impl InterpolationConfig {
    pub fn lambda(&self, space: Space) -> f64 {
        match space {
            Space::Textual => self.lambda_t,
            Space::Visual => self.lambda_v,
            Space::Latent => self.lambda_l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("lambda_t", self.lambda_t),
            ("lambda_v", self.lambda_v),
            ("lambda_l", self.lambda_l),
        ] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidConfig(format!("{name} = {l} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Synthetic embeddings with the dataset rows each one was composed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedBatch {
    pub embeddings: EmbeddingMatrix,
    pub parent_pairs: Vec<(usize, usize)>,
    pub parent_labels: Vec<(i64, i64)>,
    /// Interpolations in the non-primary spaces, row-aligned with `embeddings`.
    pub auxiliary: BTreeMap<Space, EmbeddingMatrix>,
}

impl SynthesizedBatch {
    pub fn empty(dim: usize) -> Self {
        Self {
            embeddings: EmbeddingMatrix::empty(dim),
            parent_pairs: Vec::new(),
            parent_labels: Vec::new(),
            auxiliary: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_pairs.is_empty()
    }

    /// Rows at `indices`, in that order, with metadata kept aligned.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select(indices),
            parent_pairs: indices.iter().map(|&i| self.parent_pairs[i]).collect(),
            parent_labels: indices.iter().map(|&i| self.parent_labels[i]).collect(),
            auxiliary: self
                .auxiliary
                .iter()
                .map(|(s, m)| (*s, m.select(indices)))
                .collect(),
        }
    }

    /// Unlabeled `Generated` dataset carrying `known` as its known label space,
    /// ready to be merged with the support set.
    pub fn into_dataset(self, known: &LabeledDataset) -> Result<LabeledDataset> {
        let n = self.len();
        let space = known.label_space().clone();
        LabeledDataset::new(
            self.embeddings,
            vec![UNLABELED; n],
            space,
            vec![SourceTag::Generated; n],
        )
    }
}

/// Spherical interpolation from `z1` (at `lambda = 0`) to `z2` (at `lambda = 1`).
///
/// The angle is measured between the normalized directions. Magnitudes are
/// interpolated linearly and reapplied, so unit inputs stay on the sphere.
/// Near-parallel inputs fall back to plain linear interpolation.
pub fn slerp(z1: &[f64], z2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::DimMismatch {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    let (n1, n2) = (norm(z1), norm(z2));
    if n1 <= 1e-12 || n2 <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    let cos = (dot(z1, z2) / (n1 * n2)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta > std::f64::consts::PI - PARALLEL_EPS {
        return Err(Error::AntipodalVectors);
    }
    if theta < PARALLEL_EPS {
        return Ok(z1
            .iter()
            .zip(z2)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect());
    }
    let s = theta.sin();
    let w1 = ((1.0 - lambda) * theta).sin() / s;
    let w2 = (lambda * theta).sin() / s;
    let magnitude = (1.0 - lambda) * n1 + lambda * n2;
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(a, b)| magnitude * (w1 * a / n1 + w2 * b / n2))
        .collect())
}

/// Draws `count` index pairs `(i, j)`, `i < j`, uniformly over the pairs of
/// known-labeled rows whose labels differ.
pub fn sample_cross_category_pairs(
    data: &LabeledDataset,
    count: usize,
    seed: RngSeed,
) -> Result<Vec<(usize, usize)>> {
    let eligible: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let l = data.labels()[i];
            l >= 0 && data.label_space().is_known(l)
        })
        .collect();
    let distinct = eligible
        .iter()
        .map(|&i| data.labels()[i])
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if distinct < 2 {
        return Err(Error::InsufficientCategories(distinct));
    }
    let mut rng = seed.rng(Stream::PairSampling);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let a = eligible[rng.random_range(0..eligible.len())];
        let b = eligible[rng.random_range(0..eligible.len())];
        if data.labels()[a] != data.labels()[b] {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    Ok(pairs)
}

/// Composes one synthetic embedding per sampled pair from the dataset's own
/// embeddings, which are taken to live in `cfg.primary`.
pub fn compose_batch(
    data: &LabeledDataset,
    cfg: &InterpolationConfig,
    seed: RngSeed,
) -> Result<SynthesizedBatch> {
    compose_batch_multi(data, &BTreeMap::new(), cfg, seed)
}

/// Like [`compose_batch`], additionally interpolating row-aligned embeddings
/// of the same samples in other spaces, each with its own lambda.
pub fn compose_batch_multi(
    data: &LabeledDataset,
    extra_spaces: &BTreeMap<Space, EmbeddingMatrix>,
    cfg: &InterpolationConfig,
    seed: RngSeed,
) -> Result<SynthesizedBatch> {
    cfg.validate()?;
    for m in extra_spaces.values() {
        if m.rows() != data.len() {
            return Err(Error::LengthMismatch(data.len(), m.rows()));
        }
    }
    let mut out = SynthesizedBatch::empty(data.dim());
    if cfg.pairs_per_epoch == 0 {
        return Ok(out);
    }
    for (space, m) in extra_spaces {
        if *space != cfg.primary {
            out.auxiliary.insert(*space, EmbeddingMatrix::empty(m.dim()));
        }
    }
    let pairs = sample_cross_category_pairs(data, cfg.pairs_per_epoch, seed)?;
    let lambda = cfg.lambda(cfg.primary);
    let x = data.embeddings();
    'pairs: for (i, j) in pairs {
        let primary = match slerp(x.row(i), x.row(j), lambda) {
            Ok(z) => z,
            Err(e) => {
                log::warn!("skipping pair ({i}, {j}): {e}");
                continue;
            }
        };
        let mut aux = Vec::with_capacity(out.auxiliary.len());
        for (space, m) in extra_spaces {
            if *space == cfg.primary {
                continue;
            }
            match slerp(m.row(i), m.row(j), cfg.lambda(*space)) {
                Ok(z) => aux.push((*space, z)),
                Err(e) => {
                    log::warn!("skipping pair ({i}, {j}) in {space:?}: {e}");
                    continue 'pairs;
                }
            }
        }
        out.embeddings.push_row(&primary)?;
        for (space, z) in aux {
            out.auxiliary
                .get_mut(&space)
                .expect("auxiliary space registered")
                .push_row(&z)?;
        }
        out.parent_pairs.push((i, j));
        out.parent_labels.push((data.labels()[i], data.labels()[j]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SourceTag;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn dataset(rows: &[[f64; 2]], labels: Vec<i64>) -> LabeledDataset {
        LabeledDataset::with_known_labels(
            EmbeddingMatrix::from_rows(2, rows).unwrap(),
            labels,
            SourceTag::Support,
        )
        .unwrap()
    }

    #[test]
    fn slerp_examples() {
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        assert!(close(&slerp(&a, &b, 0.0).unwrap(), &a, 1e-15));
        assert!(close(
            &slerp(&a, &b, 0.5).unwrap(),
            &[FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            1e-12
        ));
        let q = slerp(&a, &b, 0.25).unwrap();
        assert!(close(&q, &[(3.0 * PI / 8.0).sin(), (PI / 8.0).sin()], 1e-12));
        assert!((q[0] - 0.92388).abs() < 1e-5 && (q[1] - 0.38268).abs() < 1e-5);
    }

    #[test]
    fn slerp_errors_and_fallback() {
        assert!(matches!(
            slerp(&[1.0, 0.0], &[-1.0, 0.0], 0.5),
            Err(Error::AntipodalVectors)
        ));
        assert!(matches!(
            slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            slerp(&[1.0], &[1.0, 0.0], 0.5),
            Err(Error::DimMismatch { .. })
        ));
        // parallel, different magnitude: linear interpolation
        let z = slerp(&[1.0, 0.0], &[3.0, 0.0], 0.5).unwrap();
        assert!(close(&z, &[2.0, 0.0], 1e-15));
    }

    #[test]
    fn slerp_unnormalized_interpolates_magnitude() {
        let z = slerp(&[2.0, 0.0], &[0.0, 4.0], 0.5).unwrap();
        assert!((norm(&z) - 3.0).abs() < 1e-12);
        assert!((z[0] - z[1]).abs() < 1e-12);
    }

    #[test]
    fn pairs_only_cross_label() {
        let d = dataset(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]], vec![0, 0, 1]);
        let pairs = sample_cross_category_pairs(&d, 50, RngSeed(3)).unwrap();
        assert_eq!(pairs.len(), 50);
        assert!(pairs.iter().all(|p| *p == (0, 2) || *p == (1, 2)));
        let single = dataset(&[[1.0, 0.0], [0.9, 0.1]], vec![0, 0]);
        assert!(matches!(
            sample_cross_category_pairs(&single, 1, RngSeed(3)),
            Err(Error::InsufficientCategories(1))
        ));
    }

    #[test]
    fn pair_labels_uniform_chi_square() {
        let d = dataset(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], vec![0, 1, 2]);
        let pairs = sample_cross_category_pairs(&d, 1000, RngSeed(11)).unwrap();
        let mut counts = BTreeMap::new();
        for p in pairs {
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        let expected = 1000.0 / 3.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square critical value at p = 0.01 with 2 degrees of freedom
        assert!(chi2 < 9.2103, "chi2 = {chi2}");
    }

    #[test]
    fn compose_examples() {
        let d = dataset(&[[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        let mut cfg = InterpolationConfig {
            pairs_per_epoch: 0,
            ..Default::default()
        };
        assert!(compose_batch(&d, &cfg, RngSeed(1)).unwrap().is_empty());

        cfg.pairs_per_epoch = 1;
        cfg.lambda_l = 0.0;
        let b = compose_batch(&d, &cfg, RngSeed(1)).unwrap();
        assert_eq!(b.len(), 1);
        let (i, _) = b.parent_pairs[0];
        assert_eq!(b.embeddings.row(0), d.embeddings().row(i));
        assert_ne!(b.parent_labels[0].0, b.parent_labels[0].1);

        cfg.lambda_l = 0.5;
        let b = compose_batch(&d, &cfg, RngSeed(1)).unwrap();
        assert!((norm(b.embeddings.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_skips_failed_pairs() {
        let d = dataset(&[[1.0, 0.0], [-1.0, 0.0]], vec![0, 1]);
        let cfg = InterpolationConfig {
            pairs_per_epoch: 5,
            ..Default::default()
        };
        assert!(compose_batch(&d, &cfg, RngSeed(1)).unwrap().is_empty());
    }

    #[test]
    fn compose_multi_space_uses_each_lambda() {
        let d = dataset(&[[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        let mut extra = BTreeMap::new();
        extra.insert(Space::Textual, d.embeddings().clone());
        let cfg = InterpolationConfig {
            lambda_t: 0.25,
            lambda_l: 0.5,
            pairs_per_epoch: 1,
            ..Default::default()
        };
        let b = compose_batch_multi(&d, &extra, &cfg, RngSeed(1)).unwrap();
        let t = &b.auxiliary[&Space::Textual];
        assert!(close(t.row(0), &slerp(&[1.0, 0.0], &[0.0, 1.0], 0.25).unwrap(), 1e-15));
        assert!(close(b.embeddings.row(0), &[FRAC_1_SQRT_2, FRAC_1_SQRT_2], 1e-12));
    }

    #[test]
    fn invalid_lambda_rejected() {
        let d = dataset(&[[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        let cfg = InterpolationConfig {
            lambda_v: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            compose_batch(&d, &cfg, RngSeed(1)),
            Err(Error::InvalidConfig(_))
        ));
    }
}
