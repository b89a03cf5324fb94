// SPDX-License-Identifier: MIT OR Apache-2.0

//! Llama-architecture decoder: configuration, parameters and the forward pass.

mod config;
mod forward;
mod record;
mod weights;

pub use config::{ModelConfig, RopeScaling};
pub use forward::{
    apply_rope, attention_sublayer, embed, forward, logits, logits_from, mlp_sublayer, rms_norm, unembed,
    validate_tokens, AttentionOutput, RopeTable,
};
pub use record::{ActivationRecord, Capture, ForwardOptions, LayerRecord};
pub use weights::{LayerWeights, Weights};
