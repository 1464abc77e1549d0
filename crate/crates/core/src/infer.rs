//! Streaming inference: online cluster inference against a dynamic leader
//! memory, and sign-binarized hash descriptors.

use std::collections::HashMap;

use serde::Serialize;

use crate::encode::LeaderSet;
use crate::error::{Error, Result};
use crate::train::ModelParams;
use crate::types::{squared_distance, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLeader {
    pub label: i64,
    pub vector: Vec<f64>,
    pub is_known: bool,
}

/// Leaders that grow and drift while a stream is processed.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderMemory {
    pub leaders: Vec<MemoryLeader>,
    /// New-category threshold on the squared distance to the nearest leader.
    pub delta_max: f64,
    /// Momentum: matched leaders move to `eta·l + (1 - eta)·f`.
    pub eta: f64,
    pub next_new_label: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryOptions {
    pub eta: f64,
    /// Multiplier applied to the trained `delta_max`.
    pub delta_scale: f64,
    /// Also seed the memory with the non-known (virtual) leaders.
    pub include_virtual: bool,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        Self {
            eta: 0.9,
            delta_scale: 1.0,
            include_virtual: false,
        }
    }
}

impl LeaderMemory {
    pub fn new(leaders: Vec<MemoryLeader>, delta_max: f64, eta: f64) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &leaders {
            if !seen.insert(l.label) {
                return Err(Error::InvalidConfig(format!("duplicate leader label {}", l.label)));
            }
        }
        if delta_max.is_nan() || delta_max < 0.0 || !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidConfig(
                "delta_max must be >= 0 and eta in [0, 1]".into(),
            ));
        }
        let next_new_label = seen.last().map_or(0, |&m| m + 1).max(0);
        Ok(Self {
            leaders,
            delta_max,
            eta,
            next_new_label,
        })
    }

    /// Seeds the memory from trained leaders. New labels start above every
    /// label of the set, included or not.
    pub fn from_leader_set(set: &LeaderSet, opts: MemoryOptions) -> Result<Self> {
        let leaders = set
            .labels
            .iter()
            .zip(&set.known_mask)
            .enumerate()
            .filter(|(_, (_, &known))| known || opts.include_virtual)
            .map(|(i, (&label, &is_known))| MemoryLeader {
                label,
                vector: set.leaders.row(i).to_vec(),
                is_known,
            })
            .collect();
        let mut mem = Self::new(leaders, set.delta_max * opts.delta_scale, opts.eta)?;
        if let Some(&top) = set.labels.last() {
            mem.next_new_label = mem.next_new_label.max(top + 1);
        }
        Ok(mem)
    }

    pub fn len(&self) -> usize {
        self.leaders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaders.is_empty()
    }

    /// Classifies one feature and updates the memory.
    ///
    /// The minimum squared distance over all leaders is compared with
    /// `delta_max`: at or above it a new leader is created from the feature;
    /// below it the nearest leader (lowest index on ties) takes the sample
    /// and moves towards it by momentum.
    pub fn step(&mut self, feature: &[f64]) -> Result<StreamVerdict> {
        let first = self.leaders.first().ok_or(Error::EmptyMemory)?;
        if first.vector.len() != feature.len() {
            return Err(Error::DimMismatch {
                expected: first.vector.len(),
                got: feature.len(),
            });
        }
        let (best, dist) = self
            .leaders
            .iter()
            .map(|l| squared_distance(&l.vector, feature))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        if dist >= self.delta_max {
            let label = self.next_new_label;
            self.next_new_label += 1;
            self.leaders.push(MemoryLeader {
                label,
                vector: feature.to_vec(),
                is_known: false,
            });
            return Ok(StreamVerdict {
                assigned_label: label,
                is_new_category: true,
                min_sq_distance: dist,
                matched_leader_index: None,
            });
        }
        let eta = self.eta;
        let leader = &mut self.leaders[best];
        for (l, f) in leader.vector.iter_mut().zip(feature) {
            *l = eta * *l + (1.0 - eta) * f;
        }
        Ok(StreamVerdict {
            assigned_label: leader.label,
            is_new_category: false,
            min_sq_distance: dist,
            matched_leader_index: Some(best),
        })
    }

    /// Sequential fold of [`step`](Self::step) over the rows of `stream`.
    pub fn run(&mut self, stream: &EmbeddingMatrix) -> Result<Vec<StreamVerdict>> {
        stream.iter_rows().map(|f| self.step(f)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamVerdict {
    pub assigned_label: i64,
    pub is_new_category: bool,
    pub min_sq_distance: f64,
    pub matched_leader_index: Option<usize>,
}

/// Free-function form of [`LeaderMemory::step`].
pub fn oci_step(mem: &mut LeaderMemory, feature: &[f64]) -> Result<StreamVerdict> {
    mem.step(feature)
}

/// Free-function form of [`LeaderMemory::run`].
pub fn oci_run(mem: &mut LeaderMemory, stream: &EmbeddingMatrix) -> Result<Vec<StreamVerdict>> {
    mem.run(stream)
}

/// Maps model inputs through the adapter, then runs the memory over them.
pub fn oci_infer(
    params: &ModelParams,
    mem: &mut LeaderMemory,
    stream: &EmbeddingMatrix,
) -> Result<Vec<StreamVerdict>> {
    let features = params.features(stream)?;
    mem.run(&features)
}

/// Packs `sign(h)` into bits, bit `j` set when `h[j] >= 0`.
pub fn hash_code(hash_pre: &[f64]) -> u64 {
    hash_pre
        .iter()
        .enumerate()
        .fold(0u64, |acc, (j, &h)| if h >= 0.0 { acc | (1 << j) } else { acc })
}

/// Interns hash codes into category ids in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct HashInterner {
    ids: HashMap<u64, i64>,
}

impl HashInterner {
    /// Returns the id and whether it was created by this call.
    pub fn intern(&mut self, code: u64) -> (i64, bool) {
        let next = self.ids.len() as i64;
        let mut fresh = false;
        let id = *self.ids.entry(code).or_insert_with(|| {
            fresh = true;
            next
        });
        (id, fresh)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HashVerdict {
    pub id: i64,
    pub code: u64,
    pub is_new: bool,
}

/// Hash-descriptor inference: equal codes share an id.
pub fn hash_infer_verdicts(params: &ModelParams, stream: &EmbeddingMatrix) -> Result<Vec<HashVerdict>> {
    let mut interner = HashInterner::default();
    stream
        .iter_rows()
        .map(|x| {
            let out = params.forward(x)?;
            let code = hash_code(&out.hash_pre);
            let (id, is_new) = interner.intern(code);
            Ok(HashVerdict { id, code, is_new })
        })
        .collect()
}

pub fn hash_infer(params: &ModelParams, stream: &EmbeddingMatrix) -> Result<Vec<i64>> {
    Ok(hash_infer_verdicts(params, stream)?
        .into_iter()
        .map(|v| v.id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory(rows: &[[f64; 2]], delta: f64, eta: f64) -> LeaderMemory {
        let leaders = rows
            .iter()
            .enumerate()
            .map(|(i, r)| MemoryLeader {
                label: i as i64,
                vector: r.to_vec(),
                is_known: true,
            })
            .collect();
        LeaderMemory::new(leaders, delta, eta).unwrap()
    }

    #[test]
    fn exact_match_leaves_leader() {
        let mut m = memory(&[[1.0, 0.0]], 0.1, 0.9);
        let v = m.step(&[1.0, 0.0]).unwrap();
        assert_eq!(v.assigned_label, 0);
        assert!(!v.is_new_category);
        assert_eq!(v.min_sq_distance, 0.0);
        assert_eq!(v.matched_leader_index, Some(0));
        assert_eq!(m.leaders[0].vector, vec![1.0, 0.0]);
    }

    #[test]
    fn far_input_creates_category() {
        let mut m = memory(&[[1.0, 0.0]], 0.1, 0.9);
        let v = m.step(&[0.0, 1.0]).unwrap();
        assert!(v.is_new_category);
        assert_eq!(v.min_sq_distance, 2.0);
        assert_eq!(v.assigned_label, 1);
        assert_eq!(v.matched_leader_index, None);
        assert_eq!(m.len(), 2);
        assert_eq!(m.next_new_label, 2);
        assert!(!m.leaders[1].is_known);
    }

    #[test]
    fn momentum_update() {
        let mut m = memory(&[[1.0, 0.0]], 1.0, 0.9);
        let v = m.step(&[0.9, 0.1]).unwrap();
        assert!(!v.is_new_category);
        assert!((v.min_sq_distance - 0.02).abs() < 1e-15);
        let l = &m.leaders[0].vector;
        assert!((l[0] - 0.99).abs() < 1e-15 && (l[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_inclusive_for_creation() {
        let mut m = memory(&[[0.0, 0.0]], 1.0, 0.5);
        assert!(m.step(&[1.0, 0.0]).unwrap().is_new_category);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut m = memory(&[[1.0, 0.0], [-1.0, 0.0]], 10.0, 1.0);
        assert_eq!(m.step(&[0.0, 1.0]).unwrap().matched_leader_index, Some(0));
    }

    #[test]
    fn errors() {
        let mut empty = LeaderMemory::new(Vec::new(), 1.0, 0.9).unwrap();
        assert!(matches!(empty.step(&[1.0]), Err(Error::EmptyMemory)));
        let mut m = memory(&[[1.0, 0.0]], 0.1, 0.9);
        assert!(matches!(m.step(&[1.0]), Err(Error::DimMismatch { .. })));
        let dup = vec![
            MemoryLeader { label: 1, vector: vec![0.0], is_known: true },
            MemoryLeader { label: 1, vector: vec![1.0], is_known: true },
        ];
        assert!(LeaderMemory::new(dup, 1.0, 0.9).is_err());
    }

    #[test]
    fn run_examples() {
        let mut m = memory(&[[1.0, 0.0]], 0.1, 0.9);
        let before = m.clone();
        let empty = EmbeddingMatrix::empty(2);
        assert!(m.run(&empty).unwrap().is_empty());
        assert_eq!(m, before);

        let s = EmbeddingMatrix::from_rows(2, &[[-1.0, 0.5], [-1.0, 0.5]]).unwrap();
        let v = m.run(&s).unwrap();
        assert!(v[0].is_new_category);
        assert_eq!(v[1].assigned_label, v[0].assigned_label);
        assert_eq!(v[1].min_sq_distance, 0.0);
    }

    #[test]
    fn order_dependence_exists() {
        // a creates a leader that then captures b; in the other order b sits
        // closer to the initial leader and joins it
        let mem = memory(&[[0.0, 0.0]], 1.0, 1.0);
        let a = [1.2, 0.0];
        let b = [0.9, 0.0];
        let mut m1 = mem.clone();
        let v1 = m1.run(&EmbeddingMatrix::from_rows(2, &[a, b]).unwrap()).unwrap();
        let mut m2 = mem.clone();
        let v2 = m2.run(&EmbeddingMatrix::from_rows(2, &[b, a]).unwrap()).unwrap();
        assert_eq!(v1[1].assigned_label, v1[0].assigned_label);
        assert_eq!(v2[0].assigned_label, 0);
        assert_ne!(v1[1].assigned_label, v2[0].assigned_label);
    }

    #[test]
    fn memory_from_leader_set_filters_virtual() {
        let set = LeaderSet {
            leaders: EmbeddingMatrix::from_rows(1, &[[0.0], [1.0], [2.0]]).unwrap(),
            labels: vec![0, 1, 7],
            delta_max: 0.5,
            known_mask: vec![true, true, false],
        };
        let m = LeaderMemory::from_leader_set(&set, MemoryOptions::default()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.next_new_label, 8);
        let opts = MemoryOptions {
            include_virtual: true,
            delta_scale: 2.0,
            ..Default::default()
        };
        let m = LeaderMemory::from_leader_set(&set, opts).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.delta_max, 1.0);
    }

    #[test]
    fn hash_codes() {
        assert_eq!(hash_code(&[0.5, -0.5, 0.0]), 0b101);
        assert_ne!(hash_code(&[0.5, -0.5]), hash_code(&[0.5, 0.5]));
        let mut i = HashInterner::default();
        assert_eq!(i.intern(9), (0, true));
        assert_eq!(i.intern(3), (1, true));
        assert_eq!(i.intern(9), (0, false));
    }
}
