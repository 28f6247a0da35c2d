//! Language-specific weight interpolation for multilingual text
//! classification.
//!
//! A multilingual base model is trained on every language, one specialist is
//! fine-tuned per language from the base weights, and each specialist is
//! merged back with the base as `alpha·specialist + (1−alpha)·base`, with
//! `alpha` picked from a grid by validation weighted F1. Fold ensembles sum the
//! member probabilities.

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod tensorstore;

pub use error::{Error, Result};

/// Crate version, recorded in manifests and printed by `--version`.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
