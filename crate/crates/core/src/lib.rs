//! Shortcut audit for composed image retrieval benchmarks.
//!
//! Rank ingestion ([`rank_store`]), per-query shortcut classification
//! ([`audit`]), retrieval metrics and compositional gap ([`metrics`]),
//! bootstrap intervals and agreement coefficients ([`stats`]) and the
//! human-validation workflow ([`validation`]).

pub mod audit;
pub mod metrics;
mod error;
pub mod rank_store;
pub mod stats;
pub mod validation;

pub use error::{CellKey, Error, Result};
