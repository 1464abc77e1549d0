//! Shared numeric types: dense row-major embedding matrices, the labeled
//! dataset container, vector primitives and the seeded RNG source.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value marking an unlabeled sample.
pub const UNLABELED: i64 = -1;

const ZERO_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Returns `v / ‖v‖₂`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Dense row-major `rows × dim` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if let Some(i) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(self.data.len() + i));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            dim: self.dim,
            data,
        })
    }
}

/// Provenance of a dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    Support,
    Generated,
    Query,
}

/// Partition of the non-negative labels. `known` are the labeled training
/// categories; `virtual` holds every other category id (synthesized clusters
/// during training, unseen categories in a query file).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub known: BTreeSet<i64>,
    #[serde(rename = "virtual")]
    pub virtual_: BTreeSet<i64>,
}

impl LabelSpace {
    pub fn known(labels: impl IntoIterator<Item = i64>) -> Self {
        Self {
            known: labels.into_iter().collect(),
            virtual_: BTreeSet::new(),
        }
    }

    pub fn contains(&self, label: i64) -> bool {
        self.known.contains(&label) || self.virtual_.contains(&label)
    }

    pub fn is_known(&self, label: i64) -> bool {
        self.known.contains(&label)
    }
}

/// Embeddings with labels, label-space partition and per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    embeddings: EmbeddingMatrix,
    labels: Vec<i64>,
    label_space: LabelSpace,
    source_tags: Vec<SourceTag>,
}

impl LabeledDataset {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<i64>,
        label_space: LabelSpace,
        source_tags: Vec<SourceTag>,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if labels.len() != n {
            return Err(Error::LengthMismatch(n, labels.len()));
        }
        if source_tags.len() != n {
            return Err(Error::LengthMismatch(n, source_tags.len()));
        }
        if let Some(l) = label_space.known.intersection(&label_space.virtual_).next() {
            return Err(Error::InvalidLabelSpace(format!(
                "label {l} is both known and virtual"
            )));
        }
        for &l in &labels {
            if l < UNLABELED {
                return Err(Error::InvalidLabelSpace(format!("negative label {l}")));
            }
            if l >= 0 && !label_space.contains(l) {
                return Err(Error::InvalidLabelSpace(format!(
                    "label {l} is in neither the known nor the virtual set"
                )));
            }
        }
        Ok(Self {
            embeddings,
            labels,
            label_space,
            source_tags,
        })
    }

    /// Dataset where every label is known and every row carries `tag`.
    pub fn with_known_labels(
        embeddings: EmbeddingMatrix,
        labels: Vec<i64>,
        tag: SourceTag,
    ) -> Result<Self> {
        let space = LabelSpace::known(labels.iter().copied().filter(|&l| l >= 0));
        let tags = vec![tag; embeddings.rows()];
        Self::new(embeddings, labels, space, tags)
    }

    /// Unlabeled dataset; every row carries `tag`.
    pub fn unlabeled(embeddings: EmbeddingMatrix, tag: SourceTag) -> Self {
        let n = embeddings.rows();
        Self {
            embeddings,
            labels: vec![UNLABELED; n],
            label_space: LabelSpace::default(),
            source_tags: vec![tag; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn source_tags(&self) -> &[SourceTag] {
        &self.source_tags
    }

    /// Whether row `i` carries a trusted ground-truth known label.
    pub fn is_ground_truth(&self, i: usize) -> bool {
        let l = self.labels[i];
        l >= 0 && self.label_space.is_known(l) && self.source_tags[i] != SourceTag::Generated
    }

    /// Distinct non-negative labels present in the rows, ascending.
    pub fn present_labels(&self) -> BTreeSet<i64> {
        self.labels.iter().copied().filter(|&l| l >= 0).collect()
    }

    /// Rows of `self` followed by rows of `other`; label spaces are merged.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let embeddings = self.embeddings.concat(&other.embeddings)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut tags = self.source_tags.clone();
        tags.extend_from_slice(&other.source_tags);
        let mut space = self.label_space.clone();
        space.known.extend(other.label_space.known.iter().copied());
        space.virtual_.extend(
            other
                .label_space
                .virtual_
                .iter()
                .copied()
                .filter(|l| !space.known.contains(l)),
        );
        Self::new(embeddings, labels, space, tags)
    }

    /// Rows at `indices`, in that order, with the same label space.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_space: self.label_space.clone(),
            source_tags: indices.iter().map(|&i| self.source_tags[i]).collect(),
        }
    }

    /// Same rows with `labels` and `label_space` replaced.
    pub fn relabeled(&self, labels: Vec<i64>, label_space: LabelSpace) -> Result<Self> {
        Self::new(
            self.embeddings.clone(),
            labels,
            label_space,
            self.source_tags.clone(),
        )
    }

    pub fn with_embeddings(&self, embeddings: EmbeddingMatrix) -> Result<Self> {
        if embeddings.rows() != self.len() {
            return Err(Error::LengthMismatch(self.len(), embeddings.rows()));
        }
        Ok(Self {
            embeddings,
            ..self.clone()
        })
    }
}

/// Root seed for every stochastic step. Independent streams are derived per
/// stage so adding draws to one stage never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream as u64);
        rng
    }

    /// Derives a child seed, e.g. one per repetition of an experiment.
    pub fn child(self, index: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// RNG stream identifiers, one per stochastic stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Synthetic = 1,
    PairSampling = 2,
    Init = 3,
    Batches = 4,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert!(matches!(
            EmbeddingMatrix::new(2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(EmbeddingMatrix::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn dataset_label_space_checks() {
        let m = EmbeddingMatrix::new(1, vec![1.0, 2.0]).unwrap();
        let both = LabelSpace {
            known: [0].into(),
            virtual_: [0].into(),
        };
        assert!(LabeledDataset::new(m.clone(), vec![0, 0], both, vec![SourceTag::Support; 2])
            .is_err());
        let space = LabelSpace::known([0]);
        assert!(
            LabeledDataset::new(m.clone(), vec![0, 3], space, vec![SourceTag::Support; 2])
                .is_err()
        );
        let ok = LabeledDataset::with_known_labels(m, vec![0, UNLABELED], SourceTag::Support)
            .unwrap();
        assert!(ok.is_ground_truth(0));
        assert!(!ok.is_ground_truth(1));
    }

    #[test]
    fn seeded_streams_are_reproducible_and_distinct() {
        use rand::Rng;
        let s = RngSeed(7);
        let a: u64 = s.rng(Stream::Init).random();
        let b: u64 = s.rng(Stream::Init).random();
        let c: u64 = s.rng(Stream::Batches).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(s.child(0), s.child(1));
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, 3).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in vec3(), b in vec3(), l in 0.01..100.0f64, m in 0.01..100.0f64) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            let la: Vec<f64> = a.iter().map(|x| x * l).collect();
            let mb: Vec<f64> = b.iter().map(|x| x * m).collect();
            let scaled = cosine_similarity(&la, &mb).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((ab - scaled).abs() < 1e-9);
        }

        #[test]
        fn normalize_idempotent(a in vec3()) {
            let once = l2_normalize(&a).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert!((norm(&once) - 1.0).abs() < 1e-6);
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
