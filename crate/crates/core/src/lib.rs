//! Metamorphic bias auditing for sentiment classifiers.
//!
//! The pipeline mutates corpus sentences along demographic axes
//! ([`mutator`]), joins model predictions for originals and mutants
//! ([`predictions`]), flags label flips ([`detector`]), measures prediction
//! shifts ([`metrics`]), compares models ([`overlap`], [`stats`]), and
//! benchmarks reference-guided test ordering ([`prioritizer`]).

pub mod detector;
pub mod dictionary;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mutator;
pub mod overlap;
pub mod pipeline;
pub mod predictions;
pub mod prioritizer;
pub mod report;
pub mod stages;
pub mod stats;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
