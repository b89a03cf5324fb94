// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weights in the safetensors single-file format.
//!
//! Two tensor-name schemas are understood. [`TensorSchema::Llama`] is the
//! naming used by published Llama checkpoints on the Hugging Face hub:
//!
//! ```text
//! model.embed_tokens.weight                          [V, d]
//! model.layers.{l}.input_layernorm.weight            [d]
//! model.layers.{l}.self_attn.q_proj.weight           [H·hd, d]
//! model.layers.{l}.self_attn.k_proj.weight           [H_kv·hd, d]
//! model.layers.{l}.self_attn.v_proj.weight           [H_kv·hd, d]
//! model.layers.{l}.self_attn.o_proj.weight           [d, H·hd]
//! model.layers.{l}.post_attention_layernorm.weight   [d]
//! model.layers.{l}.mlp.gate_proj.weight              [d_ff, d]
//! model.layers.{l}.mlp.up_proj.weight                [d_ff, d]
//! model.layers.{l}.mlp.down_proj.weight              [d, d_ff]
//! model.norm.weight                                  [d]
//! lm_head.weight                                     [V, d]   (absent when tied)
//! ```
//!
//! [`TensorSchema::Tiny`] uses the short names of [`crate::model::Weights`]
//! fields (`embedding`, `layers.{l}.wq`, `final_norm`, ...) and is what test
//! models are written with. Both schemas use the half-split rotary pairing.
//!
//! F32, F16 and BF16 tensors are accepted; everything is held as `f32`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::model::{LayerWeights, ModelConfig, Weights};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorSchema {
    Llama,
    Tiny,
}

/// Which parameter a tensor name refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Embedding,
    Unembedding,
    FinalNorm,
    AttnNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    MlpNorm,
    Gate,
    Up,
    Down,
}

const LAYER_SLOTS: [Slot; 9] = [
    Slot::AttnNorm,
    Slot::Wq,
    Slot::Wk,
    Slot::Wv,
    Slot::Wo,
    Slot::MlpNorm,
    Slot::Gate,
    Slot::Up,
    Slot::Down,
];

impl TensorSchema {
    fn name(self, slot: Slot, layer: usize) -> String {
        match self {
            Self::Llama => match slot {
                Slot::Embedding => "model.embed_tokens.weight".into(),
                Slot::Unembedding => "lm_head.weight".into(),
                Slot::FinalNorm => "model.norm.weight".into(),
                Slot::AttnNorm => format!("model.layers.{layer}.input_layernorm.weight"),
                Slot::Wq => format!("model.layers.{layer}.self_attn.q_proj.weight"),
                Slot::Wk => format!("model.layers.{layer}.self_attn.k_proj.weight"),
                Slot::Wv => format!("model.layers.{layer}.self_attn.v_proj.weight"),
                Slot::Wo => format!("model.layers.{layer}.self_attn.o_proj.weight"),
                Slot::MlpNorm => format!("model.layers.{layer}.post_attention_layernorm.weight"),
                Slot::Gate => format!("model.layers.{layer}.mlp.gate_proj.weight"),
                Slot::Up => format!("model.layers.{layer}.mlp.up_proj.weight"),
                Slot::Down => format!("model.layers.{layer}.mlp.down_proj.weight"),
            },
            Self::Tiny => match slot {
                Slot::Embedding => "embedding".into(),
                Slot::Unembedding => "unembedding".into(),
                Slot::FinalNorm => "final_norm".into(),
                Slot::AttnNorm => format!("layers.{layer}.attn_norm"),
                Slot::Wq => format!("layers.{layer}.wq"),
                Slot::Wk => format!("layers.{layer}.wk"),
                Slot::Wv => format!("layers.{layer}.wv"),
                Slot::Wo => format!("layers.{layer}.wo"),
                Slot::MlpNorm => format!("layers.{layer}.mlp_norm"),
                Slot::Gate => format!("layers.{layer}.w_gate"),
                Slot::Up => format!("layers.{layer}.w_up"),
                Slot::Down => format!("layers.{layer}.w_down"),
            },
        }
    }

    fn detect(names: &BTreeSet<&str>) -> Self {
        if names.contains("model.embed_tokens.weight") {
            Self::Llama
        } else {
            Self::Tiny
        }
    }
}

fn expected_shape(cfg: &ModelConfig, slot: Slot) -> Vec<usize> {
    let d = cfg.hidden_dim;
    let hd = cfg.head_dim();
    match slot {
        Slot::Embedding | Slot::Unembedding => vec![cfg.vocab_size, d],
        Slot::FinalNorm | Slot::AttnNorm | Slot::MlpNorm => vec![d],
        Slot::Wq => vec![cfg.num_heads * hd, d],
        Slot::Wk | Slot::Wv => vec![cfg.num_kv_heads * hd, d],
        Slot::Wo => vec![d, cfg.num_heads * hd],
        Slot::Gate | Slot::Up => vec![cfg.ff_dim, d],
        Slot::Down => vec![d, cfg.ff_dim],
    }
}

fn to_f32(name: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let bytes = view.data();
    Ok(match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        other => {
            return Err(Error::Load(format!("{name}: unsupported dtype {other:?}")));
        }
    })
}

/// Parses a safetensors buffer against `config`.
pub fn weights_from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Weights> {
    config.validate()?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Load(e.to_string()))?;
    let names: BTreeSet<&str> = st.iter().map(|(n, _)| n).collect();
    let schema = TensorSchema::detect(&names);

    let mut wanted = vec![(Slot::Embedding, 0), (Slot::FinalNorm, 0)];
    for l in 0..config.num_layers {
        wanted.extend(LAYER_SLOTS.iter().map(|&s| (s, l)));
    }
    let tied = !names.contains(schema.name(Slot::Unembedding, 0).as_str());
    if !tied {
        wanted.push((Slot::Unembedding, 0));
    }

    let wanted_names: BTreeSet<String> = wanted.iter().map(|&(s, l)| schema.name(s, l)).collect();
    let missing: Vec<&str> = wanted_names
        .iter()
        .map(String::as_str)
        .filter(|n| !names.contains(n))
        .collect();
    let extra: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| !wanted_names.contains(*n))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = Vec::new();
        if !missing.is_empty() {
            msg.push(format!("missing tensors: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            msg.push(format!("unexpected tensors: {}", extra.join(", ")));
        }
        return Err(Error::Load(msg.join("; ")));
    }

    let mut loaded: HashMap<(usize, usize), Vec<f32>> = HashMap::new();
    for &(slot, layer) in &wanted {
        let name = schema.name(slot, layer);
        let view = st.tensor(&name).map_err(|e| Error::Load(format!("{name}: {e}")))?;
        let shape = expected_shape(config, slot);
        if view.shape() != shape.as_slice() {
            return Err(Error::Load(format!(
                "{name}: shape {:?} does not match config (expected {shape:?})",
                view.shape()
            )));
        }
        loaded.insert((slot as usize, layer), to_f32(&name, &view)?);
    }

    let mut take = |slot: Slot, layer: usize| loaded.remove(&(slot as usize, layer)).expect("checked above");
    let mut mat = |slot: Slot, layer: usize| {
        let shape = expected_shape(config, slot);
        // Norm scales are 1-D; carry them as single-column matrices.
        Matrix::from_vec(shape[0], shape.get(1).copied().unwrap_or(1), take(slot, layer))
    };
    let embedding = mat(Slot::Embedding, 0);
    let unembedding = (!tied).then(|| mat(Slot::Unembedding, 0));
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        layers.push(LayerWeights {
            attn_norm: mat(Slot::AttnNorm, l).into_vec(),
            wq: mat(Slot::Wq, l),
            wk: mat(Slot::Wk, l),
            wv: mat(Slot::Wv, l),
            wo: mat(Slot::Wo, l),
            mlp_norm: mat(Slot::MlpNorm, l).into_vec(),
            w_gate: mat(Slot::Gate, l),
            w_up: mat(Slot::Up, l),
            w_down: mat(Slot::Down, l),
        });
    }
    let final_norm = mat(Slot::FinalNorm, 0).into_vec();
    let weights = Weights {
        config: config.clone(),
        embedding,
        layers,
        final_norm,
        unembedding,
    };
    weights.validate()?;
    Ok(weights)
}

pub fn load_weights(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Weights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes, config)
}

/// Serialises `weights` as little-endian F32 under `schema`.
pub fn weights_to_bytes(weights: &Weights, schema: TensorSchema) -> Result<Vec<u8>> {
    weights.validate()?;
    let cfg = &weights.config;
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut push = |slot: Slot, layer: usize, data: &[f32]| {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        tensors.push((schema.name(slot, layer), expected_shape(cfg, slot), bytes));
    };
    push(Slot::Embedding, 0, weights.embedding.as_slice());
    if let Some(u) = &weights.unembedding {
        push(Slot::Unembedding, 0, u.as_slice());
    }
    push(Slot::FinalNorm, 0, &weights.final_norm);
    for (l, lw) in weights.layers.iter().enumerate() {
        push(Slot::AttnNorm, l, &lw.attn_norm);
        push(Slot::Wq, l, lw.wq.as_slice());
        push(Slot::Wk, l, lw.wk.as_slice());
        push(Slot::Wv, l, lw.wv.as_slice());
        push(Slot::Wo, l, lw.wo.as_slice());
        push(Slot::MlpNorm, l, &lw.mlp_norm);
        push(Slot::Gate, l, lw.w_gate.as_slice());
        push(Slot::Up, l, lw.w_up.as_slice());
        push(Slot::Down, l, lw.w_down.as_slice());
    }
    let views = tensors
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Load(format!("{name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, None).map_err(|e| Error::Load(e.to_string()))
}

pub fn save_weights(path: impl AsRef<Path>, weights: &Weights, schema: TensorSchema) -> Result<()> {
    let path = path.as_ref();
    let bytes = weights_to_bytes(weights, schema)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
