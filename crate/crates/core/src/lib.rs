//! Core algorithms for building topic landing pages from search queries.
//!
//! Queries are embedded with a small transformer encoder trained on co-click
//! statistics, clustered within product types, deduplicated against existing
//! shelf and facet pages, and the survivors are selected under a page quota.
//! A date-split experiment harness evaluates the effect of publishing pages.
//!
//! The crate is `no_std` (with `alloc`). File formats, checkpoints and the
//! command line live in the `topicforge` crate.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod cluster;
pub mod dedup;
pub mod experiment;
pub mod ingest;
pub mod metric;
pub mod model;
pub mod synthetic;
pub mod text;
pub mod tokenize;
pub mod topicpage;
pub mod train;

mod linalg;

pub use ingest::{CandidateQuery, CandidateSource, ClickRecord, PageRecord, PageType};
pub use metric::{CoClickStats, QueryPairSample};
pub use model::{EmbeddingVector, ModelConfig, ModelParams};
pub use tokenize::{FacetLexicon, FacetSet, TokenSequence, Vocabulary};
pub use cluster::{ClusterResult, Linkage, ProductTypeIndex};
pub use dedup::{DedupDecision, FacetIndex, ShelfIndex};
