//! Multi-path visualization code synthesis.
//!
//! A query over tabular data is expanded into several reasoning paths, each
//! path becomes a plotting script that is executed and reviewed, and the
//! reviewed candidates are merged into one final script.

pub mod agents;
pub mod bench;
pub mod config;
pub mod demo;
pub mod executor;
pub mod gateway;
pub mod ledger;
pub mod pipeline;
pub mod prompts;
pub mod record;
pub mod types;

pub use config::{PipelineConfig, PipelineMode};
pub use ledger::StageLedger;
pub use types::*;
