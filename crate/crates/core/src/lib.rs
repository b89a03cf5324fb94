// SPDX-License-Identifier: MIT OR Apache-2.0

//! Residual-stream interpretability toolkit for Llama-style decoders.
//!
//! A pure-Rust f32 forward pass with hook points on every sublayer and head,
//! declarative knockouts, activation patches and attention-edge masks,
//! figurative/literal interpretation scores with bootstrap statistics, and
//! an experiment harness that turns a dataset of idiom sentences into
//! per-layer and per-head effect tables.

pub mod dataset_builder;
pub mod error;
pub mod harness;
pub mod interventions;
pub mod io;
pub mod metrics;
pub mod model;
mod par;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use io::dataset;
