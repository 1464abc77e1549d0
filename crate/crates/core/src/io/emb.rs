//! `EMB1` embedding files.
//!
//! ```text
//! "EMB1" | version u16 | dim u32 | count u64 | count*dim f32 (row-major)
//!        | metadata length u64 | metadata JSON
//! ```
//! All integers and floats are little-endian. The metadata object carries
//! `labels`, `label_space` and `source_tags`; an empty `labels` array means
//! every row is unlabeled and an empty `source_tags` array tags labeled rows
//! as support and the rest as query.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{byte_len, read_file, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, LabelSpace, LabeledDataset, SourceTag, UNLABELED};

const MAGIC: [u8; 4] = *b"EMB1";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    labels: Vec<i64>,
    label_space: LabelSpace,
    source_tags: Vec<SourceTag>,
}

/// Serializes `data`; embeddings are stored as f32.
pub fn encode_embeddings(data: &LabeledDataset) -> Result<Vec<u8>> {
    let dim = u32::try_from(data.dim())
        .map_err(|_| Error::InvalidConfig(format!("dim {} exceeds u32", data.dim())))?;
    let mut out = Vec::with_capacity(18 + data.len() * data.dim() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data.embeddings().as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let meta = serde_json::to_vec(&Metadata {
        labels: data.labels().to_vec(),
        label_space: data.label_space().clone(),
        source_tags: data.source_tags().to_vec(),
    })?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

/// `data` with every embedding value rounded to f32, i.e. exactly what a
/// write/read cycle through this format yields.
pub fn storable(data: &LabeledDataset) -> LabeledDataset {
    let rounded = data.embeddings().as_slice().iter().map(|&v| v as f32 as f64).collect();
    let m = EmbeddingMatrix::new(data.dim(), rounded).expect("finite values stay finite");
    data.with_embeddings(m).expect("same row count")
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32("dim")? as usize;
    let count = r.u64("count")?;
    let payload = r.take(byte_len(count, dim as u64 * 4, "payload")?, "payload")?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let meta: Metadata = serde_json::from_slice(r.len_prefixed("metadata")?)
        .map_err(|e| Error::MetadataMismatch(format!("metadata JSON: {e}")))?;
    r.finish()?;

    let count = count as usize;
    if dim == 0 && count > 0 {
        return Err(Error::MetadataMismatch("dim is 0 for a non-empty file".into()));
    }
    let embeddings = EmbeddingMatrix::new(dim, values)?;
    let labels = match meta.labels.len() {
        0 => vec![UNLABELED; count],
        n if n == count => meta.labels,
        n => {
            return Err(Error::MetadataMismatch(format!(
                "{n} labels for {count} rows"
            )))
        }
    };
    let tags = match meta.source_tags.len() {
        0 => labels
            .iter()
            .map(|&l| {
                if meta.label_space.is_known(l) {
                    SourceTag::Support
                } else {
                    SourceTag::Query
                }
            })
            .collect(),
        n if n == count => meta.source_tags,
        n => {
            return Err(Error::MetadataMismatch(format!(
                "{n} source tags for {count} rows"
            )))
        }
    };
    LabeledDataset::new(embeddings, labels, meta.label_space, tags)
        .map_err(|e| Error::MetadataMismatch(e.to_string()))
}

pub fn write_embeddings(data: &LabeledDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_embeddings(data)?)
}

pub fn read_embeddings(path: &Path) -> Result<LabeledDataset> {
    decode_embeddings(&read_file(path)?)
}
