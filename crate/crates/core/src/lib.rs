//! Knowledge-enriched task-oriented dialogue at desk scale.

pub mod data;
pub mod entities;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod select;
pub mod seqfmt;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{CoreError, Result};
