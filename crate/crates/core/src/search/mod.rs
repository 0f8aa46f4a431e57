//! BM25 retrieval over item titles.

mod index;
pub mod tune;

pub use index::{idf, Bm25Params, InvertedIndex, Posting, SearchHit};
pub use tune::{tune_params, GridPoint, GridReport, GridSpec, ParamGrid, ValidationCase};
