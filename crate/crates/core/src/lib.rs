//! Late-interaction retrieval for multimodal (image + question) queries.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f64` matrices, linear layers with hand-written
//!   backward passes, seeded RNG, gradient checking.
//! - [`embedding_io`]: the binary token-embedding format, JSONL records, and
//!   a planted-concept synthetic dataset generator.
//! - [`late_interaction`]: MaxSim scoring and exact top-k search.
//! - [`index`]: k-means centroids, inverted lists, 2-bit residual codes and
//!   two-stage approximate search.
//! - [`qap`]: global-embedding projection and query-guided attentive pooling,
//!   the trainable part of the query encoder.
//! - [`training`]: in-batch-negative contrastive alignment with AdamW.
//! - [`r2p`]: response-to-passage dataset construction.
//! - [`eval`]: MRR@5, Recall@k, Pseudo-Recall@k.
//! - [`commands`]: the operations behind the `mire` binary.

pub mod commands;
pub mod embedding_io;
pub mod error;
pub mod eval;
pub mod index;
pub mod late_interaction;
pub mod numerics;
pub mod qap;
pub mod r2p;
pub mod training;

pub use error::{Error, Result};
