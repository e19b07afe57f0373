//! Desk-scale toolkit for continued pre-training of tabular in-context
//! learners: synthetic prior generation, corpus curation with contamination
//! checks, a small transformer trained with exact manual gradients, and a
//! deterministic evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod contamination;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod prior;
pub mod rng;
pub mod stats;
pub mod table;
pub mod train;

pub use error::{Error, Result};
