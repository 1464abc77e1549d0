//! Model checkpoints (`OCKP`) and leader files (`OLDR`).
//!
//! Both share one layout: magic, version u16, a length-prefixed JSON header,
//! then a u64 value count and that many little-endian f64 values. The header
//! says how the flat payload splits into tensors or leader rows.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{byte_len, read_file, write_atomic, Reader};
use crate::encode::LeaderSet;
use crate::error::{Error, Result};
use crate::infer::{LeaderMemory, MemoryLeader};
use crate::train::{ModelParams, ModelShape, TrainConfig};
use crate::types::EmbeddingMatrix;

const CKPT_MAGIC: [u8; 4] = *b"OCKP";
const LEADER_MAGIC: [u8; 4] = *b"OLDR";
const VERSION: u16 = 1;

fn encode<H: Serialize>(magic: [u8; 4], header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(22 + header.len() + payload.len() * 8);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode<H: for<'de> Deserialize<'de>>(magic: [u8; 4], bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let mut r = Reader::new(bytes);
    r.magic(magic)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let header: H = serde_json::from_slice(r.len_prefixed("header")?)
        .map_err(|e| Error::MetadataMismatch(format!("header JSON: {e}")))?;
    let count = r.u64("payload count")?;
    let raw = r.take(byte_len(count, 8, "payload")?, "payload")?;
    r.finish()?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Trained parameters plus the configuration and epoch that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    epoch: usize,
    input_dim: usize,
    proj_dim: usize,
    hash_bits: usize,
    class_labels: Vec<i64>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let shape = ckpt.params.shape();
    let tensors = ckpt.params.tensors();
    let header = CheckpointHeader {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        input_dim: shape.input_dim,
        proj_dim: shape.proj_dim,
        hash_bits: shape.hash_bits,
        class_labels: ckpt.params.class_labels.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let payload: Vec<f64> = tensors.iter().flat_map(|(_, t)| t.iter().copied()).collect();
    write_atomic(path, &encode(CKPT_MAGIC, &header, &payload)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (h, values): (CheckpointHeader, Vec<f64>) = decode(CKPT_MAGIC, &read_file(path)?)?;
    let shape = ModelShape {
        input_dim: h.input_dim,
        proj_dim: h.proj_dim,
        hash_bits: h.hash_bits,
    };
    // the init draw is discarded; every tensor is overwritten below
    let mut params = ModelParams::init(shape, h.class_labels, &mut ChaCha8Rng::seed_from_u64(0));
    let mut slots = params.tensors_mut();
    if slots.len() != h.tensors.len() {
        return Err(Error::MetadataMismatch(format!(
            "{} tensors listed, model has {}",
            h.tensors.len(),
            slots.len()
        )));
    }
    let mut offset = 0;
    for ((name, slot), entry) in slots.iter_mut().zip(&h.tensors) {
        if *name != entry.name || slot.len() != entry.len {
            return Err(Error::MetadataMismatch(format!(
                "tensor {} ({}) does not fit slot {name} ({})",
                entry.name,
                entry.len,
                slot.len()
            )));
        }
        let end = offset + entry.len;
        let chunk = values.get(offset..end).ok_or_else(|| {
            Error::MetadataMismatch(format!("payload too short for tensor {name}"))
        })?;
        slot.copy_from_slice(chunk);
        offset = end;
    }
    drop(slots);
    if offset != values.len() {
        return Err(Error::MetadataMismatch(format!(
            "{} payload values left after the last tensor",
            values.len() - offset
        )));
    }
    params.check_finite()?;
    Ok(Checkpoint {
        params,
        config: h.config,
        epoch: h.epoch,
    })
}

/// Contents of a leader file: either the leaders produced by training or a
/// live memory snapshot taken after `processed` stream items.
#[derive(Debug, Clone, PartialEq)]
pub enum LeaderFile {
    Trained(LeaderSet),
    Memory { memory: LeaderMemory, processed: usize },
}

#[derive(Serialize, Deserialize)]
struct LeaderHeader {
    dim: usize,
    labels: Vec<i64>,
    is_known: Vec<bool>,
    delta_max: f64,
    /// Present only for memory snapshots.
    eta: Option<f64>,
    next_new_label: Option<i64>,
    processed: Option<usize>,
}

pub fn write_leaders(file: &LeaderFile, path: &Path) -> Result<()> {
    let (header, payload) = match file {
        LeaderFile::Trained(set) => (
            LeaderHeader {
                dim: set.leaders.dim(),
                labels: set.labels.clone(),
                is_known: set.known_mask.clone(),
                delta_max: set.delta_max,
                eta: None,
                next_new_label: None,
                processed: None,
            },
            set.leaders.as_slice().to_vec(),
        ),
        LeaderFile::Memory { memory, processed } => (
            LeaderHeader {
                dim: memory.leaders.first().map_or(0, |l| l.vector.len()),
                labels: memory.leaders.iter().map(|l| l.label).collect(),
                is_known: memory.leaders.iter().map(|l| l.is_known).collect(),
                delta_max: memory.delta_max,
                eta: Some(memory.eta),
                next_new_label: Some(memory.next_new_label),
                processed: Some(*processed),
            },
            memory.leaders.iter().flat_map(|l| l.vector.iter().copied()).collect(),
        ),
    };
    write_atomic(path, &encode(LEADER_MAGIC, &header, &payload)?)
}

pub fn read_leaders(path: &Path) -> Result<LeaderFile> {
    let (h, values): (LeaderHeader, Vec<f64>) = decode(LEADER_MAGIC, &read_file(path)?)?;
    let n = h.labels.len();
    if h.is_known.len() != n || values.len() != n * h.dim {
        return Err(Error::MetadataMismatch(format!(
            "{n} labels, {} known flags and {} values for dim {}",
            h.is_known.len(),
            values.len(),
            h.dim
        )));
    }
    let bad = |e: Error| Error::MetadataMismatch(e.to_string());
    match (h.eta, h.next_new_label, h.processed) {
        (None, None, None) => {
            if h.labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::MetadataMismatch("leader labels not ascending".into()));
            }
            Ok(LeaderFile::Trained(LeaderSet {
                leaders: EmbeddingMatrix::new(h.dim, values)?,
                labels: h.labels,
                delta_max: h.delta_max,
                known_mask: h.is_known,
            }))
        }
        (Some(eta), Some(next), Some(processed)) => {
            let leaders = h
                .labels
                .iter()
                .zip(&h.is_known)
                .zip(values.chunks(h.dim.max(1)))
                .map(|((&label, &is_known), v)| MemoryLeader {
                    label,
                    vector: v.to_vec(),
                    is_known,
                })
                .collect();
            let mut memory = LeaderMemory::new(leaders, h.delta_max, eta).map_err(bad)?;
            if next < memory.next_new_label {
                return Err(Error::MetadataMismatch(format!(
                    "next label {next} collides with a stored leader"
                )));
            }
            memory.next_new_label = next;
            Ok(LeaderFile::Memory { memory, processed })
        }
        _ => Err(Error::MetadataMismatch(
            "memory fields must be all present or all absent".into(),
        )),
    }
}
