//! Simulation laboratory for shift-aware federated learning with a pool of
//! expert models.
//!
//! Parties observe windowed streams, detect covariate shift with kernel MMD
//! and label shift with Jensen-Shannon divergence, and report summaries to
//! an aggregator that clusters shifted parties, reuses or creates experts,
//! and merges redundant ones. Baselines train a single global model.

// Validation uses `!(x > 0.0)` style checks so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod cluster;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod optimizer;
pub mod party;
pub mod rng;
pub mod stream;

pub use error::{Error, Result};
