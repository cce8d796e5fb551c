//! Multi-task personalized product-search ranking.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: tensors, reverse-mode autodiff, Adam
//! - [`datamodel`]: records, feature schema, encoding, JSONL IO
//! - [`textmatch`]: tokenizer, text encoder, matching operators, semantic scorer
//! - [`networks`]: DCN-V2 / FT-Transformer shared bottoms, MMoE heads, training
//! - [`pipeline`]: stratified sampling and click-derived relevance labels
//! - [`evalmetrics`]: AUC-ROC, MRR@K, personalization degree PD@K
//! - [`harness`]: synthetic logs, experiments, ablations, grid search

pub mod datamodel;
pub mod error;
pub mod evalmetrics;
pub mod harness;
pub mod networks;
pub mod numerics;
pub mod pipeline;
pub mod textmatch;

pub use error::{Error, Result};
