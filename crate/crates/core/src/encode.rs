//! Semi-supervised leader encoding: cluster the agency set, align clusters
//! with ground-truth labels, and summarize every label by its mean feature.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::error::{Error, Result};
use crate::types::{
    l2_normalize, squared_distance, dot, EmbeddingMatrix, LabelSpace, LabeledDataset,
};

/// Partition of dataset rows; ids are contiguous in `[0, num_clusters)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub cluster_ids: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.cluster_ids.iter().enumerate() {
            m[c].push(i);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusteringAlgorithm {
    MutualKnnComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub knn_k: usize,
    pub min_similarity: f64,
    pub algorithm: ClusteringAlgorithm,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            knn_k: 10,
            min_similarity: 0.0,
            algorithm: ClusteringAlgorithm::MutualKnnComponents,
        }
    }
}

/// Category leaders and the new-category distance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSet {
    /// One row per label, ordered like `labels` (ascending).
    pub leaders: EmbeddingMatrix,
    pub labels: Vec<i64>,
    /// Largest squared L2 distance from any sample to its own leader.
    pub delta_max: f64,
    pub known_mask: Vec<bool>,
}

impl LeaderSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: i64) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }
}

/// Clusters rows by the configured algorithm.
pub fn cluster(data: &LabeledDataset, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    cluster_matrix(data.embeddings(), cfg)
}

/// Mutual-kNN connected components under cosine similarity.
///
/// `j` counts as one of `i`'s k nearest neighbours when `sim(i, j)` is at
/// least the k-th largest similarity of `i` to the other rows, so ties are
/// all included and the result does not depend on row order. An edge joins
/// `i` and `j` when each is among the other's neighbours and their similarity
/// is at least `min_similarity`. Cluster ids follow the smallest member index.
/// `knn_k` is capped at `N - 1`.
pub fn cluster_matrix(x: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<ClusterAssignment> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::DatasetTooSmall(n));
    }
    match cfg.algorithm {
        ClusteringAlgorithm::MutualKnnComponents => {}
    }
    let k = cfg.knn_k.clamp(1, n - 1);
    let units: Vec<Vec<f64>> = x.iter_rows().map(l2_normalize).collect::<Result<_>>()?;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = dot(&units[i], &units[j]).clamp(-1.0, 1.0);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let mut kth = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        scratch.extend((0..n).filter(|&j| j != i).map(|j| sim[i * n + j]));
        scratch.sort_by(|a, b| b.total_cmp(a));
        kth[i] = scratch[k - 1];
    }

    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sim[i * n + j];
            if s >= cfg.min_similarity && s >= kth[i] && s >= kth[j] {
                uf.union(i, j);
            }
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut root_id = BTreeMap::new();
    for (i, id) in ids.iter_mut().enumerate() {
        let r = uf.find(i);
        let next = root_id.len();
        *id = *root_id.entry(r).or_insert(next);
    }
    Ok(ClusterAssignment {
        cluster_ids: ids,
        num_clusters: root_id.len(),
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Aligns clusters with the ground-truth known labels and relabels every row.
///
/// A contingency table between clusters and known labels is built over the
/// ground-truth rows and solved for maximum overlap. A cluster matched to a
/// known label with nonzero overlap passes that label to all its members;
/// the remaining clusters receive fresh virtual ids above every known id, in
/// cluster order. Ground-truth rows always keep their own label.
///
/// Returns the dataset with rectified labels; the virtual set of the label
/// space lists exactly the fresh ids in use.
pub fn rectify(assign: &ClusterAssignment, data: &LabeledDataset) -> Result<LabeledDataset> {
    if assign.cluster_ids.len() != data.len() {
        return Err(Error::LengthMismatch(data.len(), assign.cluster_ids.len()));
    }
    let truth: Vec<usize> = (0..data.len()).filter(|&i| data.is_ground_truth(i)).collect();
    if truth.is_empty() {
        return Err(Error::NoLabeledSamples);
    }
    let known: Vec<i64> = data.label_space().known.iter().copied().collect();
    let (rows, cols) = (assign.num_clusters, known.len());
    let mut overlap = vec![0.0; rows * cols];
    for &i in &truth {
        let c = assign.cluster_ids[i];
        let k = known.binary_search(&data.labels()[i]).expect("ground truth is known");
        overlap[c * cols + k] += 1.0;
    }
    let negated: Vec<f64> = overlap.iter().map(|o| -o).collect();
    let matching = hungarian(&negated, rows, cols)?;

    let mut cluster_label = vec![None; rows];
    for (c, k) in matching.pairs() {
        if overlap[c * cols + k] > 0.0 {
            cluster_label[c] = Some(known[k]);
        }
    }
    let mut next_virtual = known.last().map_or(0, |&m| m + 1).max(0);
    let mut virtual_ = BTreeSet::new();
    for label in cluster_label.iter_mut() {
        if label.is_none() {
            *label = Some(next_virtual);
            next_virtual += 1;
        }
    }
    let mut labels: Vec<i64> = assign
        .cluster_ids
        .iter()
        .map(|&c| cluster_label[c].expect("every cluster labeled"))
        .collect();
    for &i in &truth {
        labels[i] = data.labels()[i];
    }
    for &l in &labels {
        if !data.label_space().is_known(l) {
            virtual_.insert(l);
        }
    }
    let space = LabelSpace {
        known: data.label_space().known.clone(),
        virtual_,
    };
    data.relabeled(labels, space)
}

/// Leader per label (mean of `features` rows carrying it) and `delta_max`.
/// Unlabeled rows are ignored.
pub fn build_leaders(data: &LabeledDataset, features: &EmbeddingMatrix) -> Result<LeaderSet> {
    if features.rows() != data.len() {
        return Err(Error::LengthMismatch(data.len(), features.rows()));
    }
    let labels: Vec<i64> = data.present_labels().into_iter().collect();
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = features.dim();
    let mut sums = vec![0.0; labels.len() * dim];
    let mut counts = vec![0usize; labels.len()];
    let mut slot = vec![usize::MAX; data.len()];
    for (i, &l) in data.labels().iter().enumerate() {
        if l < 0 {
            continue;
        }
        let m = labels.binary_search(&l).expect("label collected above");
        slot[i] = m;
        counts[m] += 1;
        for (s, x) in sums[m * dim..(m + 1) * dim].iter_mut().zip(features.row(i)) {
            *s += x;
        }
    }
    for (m, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyCategory(labels[m]));
        }
        for s in &mut sums[m * dim..(m + 1) * dim] {
            *s /= c as f64;
        }
    }
    let leaders = EmbeddingMatrix::new(dim, sums)?;
    let delta_max = slot
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != usize::MAX)
        .map(|(i, &m)| squared_distance(features.row(i), leaders.row(m)))
        .fold(0.0, f64::max);
    let known_mask = labels
        .iter()
        .map(|&l| data.label_space().is_known(l))
        .collect();
    Ok(LeaderSet {
        leaders,
        labels,
        delta_max,
        known_mask,
    })
}

/// Clusters and rectifies the agency set in one call.
pub fn encode(data: &LabeledDataset, cfg: &ClusteringConfig) -> Result<LabeledDataset> {
    let assign = cluster(data, cfg)?;
    rectify(&assign, data)
}
