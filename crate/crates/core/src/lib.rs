//! Dialogue corpus curation and evaluation toolkit.
//!
//! Machine-side authoring (script excerpt extraction, prompt rendering and
//! reply parsing), post-edit analytics (HTER, edit taxonomy, repetition
//! rate), derailment detection, dataset partitioning, language-model
//! evaluation (CPPL, Acc@N) and human-evaluation survey assembly.

pub mod authoring;
pub mod config;
pub mod error;
pub mod lmeval;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod postedit;
pub mod review;
pub mod script;
pub mod stats;
pub mod survey;

pub use config::MetricConfig;
pub use error::CorpusError;
pub use model::{Dialogue, Source, Turn};
