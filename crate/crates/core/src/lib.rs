//! Desk-scale toolkit for normal-vs-atypical mitotic figure classification:
//! synthetic data generation, center-crop preprocessing, stratified k-fold
//! training of a single-logit CNN classifier, fold-ensemble inference and a
//! challenge-style metrics/reporting engine.
//!
//! Everything is deterministic from a single root seed; see [`rng`] for the
//! stream-derivation scheme.

pub mod checkpoint;
pub mod data_model;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod splits;
pub mod train;

pub use error::{Error, Result};
