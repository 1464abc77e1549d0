//! Diversity-driven refinement: drops synthetic embeddings whose mean cosine
//! similarity to the known-category centers exceeds a threshold.

use crate::compose::SynthesizedBatch;
use crate::error::{Error, Result};
use crate::types::{cosine_similarity, EmbeddingMatrix, LabeledDataset};

/// Per-label arithmetic means of the support embeddings, in raw feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCenters {
    pub centers: EmbeddingMatrix,
    pub labels: Vec<i64>,
}

impl CategoryCenters {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Thresholds tuned for the standard fine-grained benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Cub,
    StanfordCars,
    OxfordPets,
    Arachnida,
    Animalia,
    Mollusca,
}

impl Benchmark {
    pub fn gamma(self) -> f64 {
        match self {
            Benchmark::Cub => 0.40,
            Benchmark::StanfordCars => 0.65,
            Benchmark::OxfordPets => 0.25,
            Benchmark::Arachnida => 0.40,
            Benchmark::Animalia => 0.20,
            Benchmark::Mollusca => 0.30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    pub gamma: f64,
}

impl RefinementConfig {
    pub fn for_benchmark(b: Benchmark) -> Self {
        Self { gamma: b.gamma() }
    }
}

pub fn compute_centers(support: &LabeledDataset) -> Result<CategoryCenters> {
    let labels: Vec<i64> = support.present_labels().into_iter().collect();
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = support.dim();
    let mut sums = vec![0.0; labels.len() * dim];
    let mut counts = vec![0usize; labels.len()];
    for (row, &l) in support.embeddings().iter_rows().zip(support.labels()) {
        if l < 0 {
            continue;
        }
        let k = labels.binary_search(&l).expect("label collected above");
        counts[k] += 1;
        for (s, x) in sums[k * dim..(k + 1) * dim].iter_mut().zip(row) {
            *s += x;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        for s in &mut sums[k * dim..(k + 1) * dim] {
            *s /= c as f64;
        }
    }
    Ok(CategoryCenters {
        centers: EmbeddingMatrix::new(dim, sums)?,
        labels,
    })
}

/// Mean over all centers of the cosine similarity between `z` and each center.
pub fn mean_similarity(z: &[f64], centers: &CategoryCenters) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for c in centers.centers.iter_rows() {
        total += cosine_similarity(z, c)?;
    }
    Ok(total / centers.len() as f64)
}

/// Per-row mean similarities; `None` where the similarity is undefined.
pub fn score_rows(rows: &EmbeddingMatrix, centers: &CategoryCenters) -> Vec<Option<f64>> {
    rows.iter_rows().map(|z| mean_similarity(z, centers).ok()).collect()
}

pub fn score_batch(batch: &SynthesizedBatch, centers: &CategoryCenters) -> Vec<Option<f64>> {
    score_rows(&batch.embeddings, centers)
}

fn retained(scores: Vec<Option<f64>>, gamma: f64) -> Vec<usize> {
    scores
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Some(s) if s <= gamma => Some(i),
            Some(_) => None,
            None => {
                log::warn!("dropping synthetic row {i}: similarity undefined");
                None
            }
        })
        .collect()
}

/// Keeps exactly the rows with mean similarity `<= gamma`, in input order.
/// Rows whose similarity is undefined (zero vectors) are dropped.
pub fn refine(
    batch: &SynthesizedBatch,
    centers: &CategoryCenters,
    cfg: &RefinementConfig,
) -> SynthesizedBatch {
    batch.select(&retained(score_batch(batch, centers), cfg.gamma))
}

/// [`refine`] for synthetic rows already stored as a dataset.
pub fn refine_dataset(
    generated: &LabeledDataset,
    centers: &CategoryCenters,
    cfg: &RefinementConfig,
) -> LabeledDataset {
    generated.select(&retained(score_rows(generated.embeddings(), centers), cfg.gamma))
}

/// Smallest threshold that retains at least `target` rows, or `None` when the
/// batch has fewer scorable rows than `target`.
pub fn gamma_for_target(scores: &[Option<f64>], target: usize) -> Option<f64> {
    let mut s: Vec<f64> = scores.iter().flatten().copied().collect();
    if target == 0 {
        return Some(-1.0);
    }
    if s.len() < target {
        return None;
    }
    s.sort_by(f64::total_cmp);
    Some(s[target - 1])
}

/// `(gamma, retained)` rows for a report of how the retained count grows with
/// the threshold.
pub fn gamma_table(scores: &[Option<f64>], gammas: &[f64]) -> Vec<(f64, usize)> {
    gammas
        .iter()
        .map(|&g| (g, scores.iter().flatten().filter(|&&s| s <= g).count()))
        .collect()
}
