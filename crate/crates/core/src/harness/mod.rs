// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration: each experiment maps `(weights, dataset,
//! config, seed)` to a result deterministically.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod output;

pub use config::{EdgeTarget, Experiment, ExperimentConfig, LayerRange, PatchSource, Sublayer};
pub use experiments::{
    derangement, run, run_because_patch, run_build_dataset, run_component_patch, run_edge_knockout,
    run_head_divergence, run_head_scan, run_kernel_align, run_sublayer_knockout, run_validate, Inputs,
};
pub use manifest::{sha256_bytes, sha256_file, InputHash, Manifest};
pub use output::{ComparisonSummary, ExperimentOutput, ValidationReport};
