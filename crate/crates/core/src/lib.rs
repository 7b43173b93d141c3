// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale laboratory for comparing transformers trained on an N-gram
//! corpus against transformers trained on a hierarchical PCFG corpus.
//!
//! The crate is organised bottom-up:
//!
//! - [`rngkit`]: keyed random streams plus Zipf and clamped-normal samplers.
//! - [`ngram`] and [`pcfg`]: the two corpus generators.
//! - [`corpus`]: binary shard format, annotation sidecar, batch iteration.
//! - [`model`]: instrumented decoder-only transformer with hand-written backward pass.
//! - [`train`]: AdamW training loop and checkpoints.
//! - [`mech`] and [`geo`]: induction, function-vector, Hydra, probe and UUAS metrics.

pub mod config;
pub mod corpus;
pub mod error;
pub mod geo;
pub mod mech;
pub mod metrics;
pub mod model;
pub mod ngram;
pub mod pcfg;
pub mod rngkit;
pub mod train;

pub use error::{HlabError, Result};
