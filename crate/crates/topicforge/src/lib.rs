//! File formats, checkpoints, configuration and the staged pipeline behind
//! the `topicforge` command.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod fixture;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{Pipeline, Stage, StageOutcome, StageReport};
