//! Two-stage ad-hoc retrieval over scientific article collections: lexical
//! first-stage ranking (BM25, RM3, SDM), passage re-ranking against an
//! external scorer, and trec_eval-compatible evaluation.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod first_stage;
pub mod index;
pub mod pipeline;
pub mod query_filter;
pub mod rerank;
pub mod trec;
pub mod tuning;

pub mod fsutil;

pub use analysis::{porter_stem, Analyzer, StopwordSet};
pub use config::{PipelineConfig, Preset, Settings};
pub use corpus::{load_corpus, Corpus, Document, FieldSelector, PublishDate};
pub use error::{Error, Result};
pub use eval::Metric;
pub use exec::Exec;
pub use first_stage::{Bm25Params, Candidate, DateFilter, FirstStageModel, Rm3Params, SdmParams};
pub use index::{BuildOptions, InvertedIndex};
pub use trec::{Judgments, QueryField, Run, Topic};
