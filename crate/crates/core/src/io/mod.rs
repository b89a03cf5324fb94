// SPDX-License-Identifier: MIT OR Apache-2.0

//! Loading and writing of every on-disk artifact.

pub mod dataset;
pub mod embeddings;
pub mod report;
pub mod tokenizer;
pub mod weights_file;

pub use report::{render_sweep, sweep_from_csv, sweep_to_csv, sweep_to_svg, write_sweep, OutputFormat};
pub use tokenizer::Tokenizer;
pub use weights_file::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, TensorSchema};
