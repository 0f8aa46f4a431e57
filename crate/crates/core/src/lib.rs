//! Recommendation by generated search queries.
//!
//! A user's purchase history is rendered into a natural-language prompt, a
//! language model decodes several hypothetical search queries from it with
//! beam search, and a BM25 engine over item titles turns each query into a
//! ranked hit list. The hit lists are merged into one top-K recommendation.
//!
//! The crate is organised along that pipeline:
//!
//! - [`corpus`]: ingestion, preprocessing, splits, prompt rendering.
//! - [`generator`]: tokenizer, interpolated n-gram model, scoring, and the
//!   external generator protocol.
//! - [`beam`]: multi-query beam search.
//! - [`search`]: inverted index, BM25, parameter tuning.
//! - [`recommend`]: query-result merge and the per-user pipeline.
//! - [`evaluate`]: Recall@K, Diversity@K, Coverage@K.
//! - [`pipeline`]: work-directory commands used by the CLI.

pub mod beam;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod generator;
pub mod io;
pub mod pipeline;
pub mod recommend;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
