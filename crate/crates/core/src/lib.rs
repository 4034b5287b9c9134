//! Two-query (user + keyword) paper click-through-rate prediction.
//!
//! The crate covers the whole offline pipeline: a synthetic interaction-log
//! generator, heterogeneous user/keyword/paper graph construction, GNN
//! propagation over trainable embeddings, correlation-weighted fusion of the
//! user and keyword queries, pluggable CTR heads, Adam training on a
//! hand-rolled reverse-mode tape, and the evaluation protocol (AUC, LogLoss,
//! scenario bins, latency benchmark).

pub mod ctr;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
