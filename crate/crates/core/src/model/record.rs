// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activations captured during one forward pass.

use crate::interventions::{HookKind, HookPoint};
use crate::tensor::Matrix;

/// Everything computed inside one decoder layer.
///
/// Values are recorded as they entered the residual stream, i.e. after any
/// knockout or patch was applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// `x^{ℓ-1}`, `T × d`.
    pub resid_in: Matrix,
    /// `a^ℓ`, `T × d`.
    pub attn_out: Matrix,
    /// `m^ℓ`, `T × d`.
    pub mlp_out: Matrix,
    /// `x^ℓ`, `T × d`.
    pub resid_out: Matrix,
    /// Per query head: attention-weighted values before the output
    /// projection, `T × hd`.
    pub head_mix: Vec<Matrix>,
    /// Per query head: contribution after its slice of the output projection,
    /// `T × d`. Summing over heads gives `attn_out`.
    pub head_out: Vec<Matrix>,
    /// Per query head: post-softmax attention, `T × T`, lower triangular.
    pub attention: Vec<Matrix>,
    /// Per key/value head: value vectors, `T × hd`.
    pub values: Vec<Matrix>,
}

/// How much of the forward pass to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Capture {
    /// Every field of every [`LayerRecord`].
    #[default]
    Full,
    /// Residual stream and sublayer outputs only; per-head tensors are empty.
    Sublayers,
    /// Nothing but logits.
    LogitsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    pub capture: Capture,
    /// Also compute logits at every position, not just the last.
    pub all_logits: bool,
}

impl ForwardOptions {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn logits_only() -> Self {
        Self {
            capture: Capture::LogitsOnly,
            all_logits: false,
        }
    }

    pub fn sublayers() -> Self {
        Self {
            capture: Capture::Sublayers,
            all_logits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub tokens: Vec<u32>,
    /// One entry per layer; empty under [`Capture::LogitsOnly`].
    pub layers: Vec<LayerRecord>,
    /// Logits at the final position.
    pub logits: Vec<f32>,
    /// `T × |V|` logits when requested.
    pub all_logits: Option<Matrix>,
}

impl ActivationRecord {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// The recorded vector at `hook`, if it was captured.
    pub fn activation(&self, hook: &HookPoint) -> Option<&[f32]> {
        let layer = self.layers.get(hook.layer)?;
        if hook.position >= self.tokens.len() {
            return None;
        }
        let m = match hook.kind {
            HookKind::Residual => &layer.resid_out,
            HookKind::AttnOutput => &layer.attn_out,
            HookKind::MlpOutput => &layer.mlp_out,
            HookKind::HeadOutput => layer.head_out.get(hook.head?)?,
        };
        (m.rows() > hook.position).then(|| m.row(hook.position))
    }

    /// Residual state entering layer `layer` (the embedding for layer 0).
    pub fn residual_in(&self, layer: usize, position: usize) -> Option<&[f32]> {
        self.layers.get(layer).map(|l| l.resid_in.row(position))
    }
}
