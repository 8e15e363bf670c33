//! Experiment orchestration around `dexhand-core`: configuration, versioned
//! artifacts, benchmarks, synergy analysis and the language-model client
//! for gesture programs.

pub mod bench;
pub mod config;
pub mod error;
pub mod llm;
pub mod persist;
pub mod stats;
pub mod synergy;

pub use error::{Error, Result};
