//! Embedding-space engine for discovering new categories on the fly.
//!
//! The pipeline turns a labelled support set into a trained feature model and
//! a leader memory that labels a query stream one sample at a time, opening a
//! new category whenever a sample lies too far from every leader:
//!
//! 1. [`compose`] blends embeddings of known categories along the sphere,
//! 2. [`refine`] drops blends that resemble the known centers too closely,
//! 3. [`encode`] clusters support + blends and aligns clusters with labels,
//! 4. [`train`] fits the adapter, projector, hash head and classifier,
//! 5. [`infer`] streams queries through the leader memory (or a hash code),
//! 6. [`eval`] scores predictions and generates synthetic benchmarks.
//!
//! [`io`] holds the binary file formats and the flat config; [`stages`] wires
//! them into the `ocd` command. Each stage has a runnable program under
//! `examples/`.

pub mod assignment;
pub mod compose;
pub mod encode;
pub mod error;
pub mod eval;
pub mod infer;
pub mod io;
pub mod refine;
pub mod stages;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{EmbeddingMatrix, LabelSpace, LabeledDataset, RngSeed, SourceTag, UNLABELED};
