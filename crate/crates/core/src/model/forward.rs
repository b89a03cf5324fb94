// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass with activation recording and intervention hooks.
//!
//! Layer `ℓ` computes, for every position `i`,
//!
//! ```text
//! a_i = Σ_j head_j(RMSNorm(x^{ℓ-1}))_i          (attention sublayer)
//! m_i = down(silu(gate(h)) ⊙ up(h)),  h = RMSNorm(x_i^{ℓ-1} + a_i)
//! x_i^ℓ = x_i^{ℓ-1} + a_i + m_i
//! ```
//!
//! Rotary embeddings are applied to queries and keys inside each attention
//! sublayer; the embedding lookup itself carries no positional signal.

use crate::error::{Error, Result};
use crate::interventions::{CompiledInterventions, EdgeMaskSpec, HookPoint, InterventionSpec};
use crate::model::record::{ActivationRecord, Capture, ForwardOptions, LayerRecord};
use crate::model::{LayerWeights, ModelConfig, Weights};
use crate::tensor::{add_assign, dot, linear, Matrix};

/// Checks token ids against the vocabulary and context length.
pub fn validate_tokens(config: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("token sequence is empty".into()));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::InvalidInput(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            config.max_seq_len
        )));
    }
    if let Some((i, t)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= config.vocab_size)
    {
        return Err(Error::InvalidInput(format!(
            "token id {t} at position {i} is outside the vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Embedding rows for `tokens`, `T × d`.
pub fn embed(weights: &Weights, tokens: &[u32]) -> Result<Matrix> {
    validate_tokens(&weights.config, tokens)?;
    let d = weights.config.hidden_dim;
    let mut out = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        out.row_mut(i).copy_from_slice(weights.embedding.row(t as usize));
    }
    Ok(out)
}

pub fn rms_norm(x: &[f32], scale: &[f32], eps: f32) -> Vec<f32> {
    let mean_sq = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (mean_sq + eps).sqrt();
    x.iter().zip(scale).map(|(v, s)| v * inv * s).collect()
}

#[inline]
fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Rotation frequencies for each of the `head_dim / 2` rotary pairs.
#[derive(Debug, Clone)]
pub struct RopeTable {
    freqs: Vec<f64>,
}

impl RopeTable {
    pub fn new(config: &ModelConfig) -> Self {
        let hd = config.head_dim();
        let mut freqs = base_freqs(hd, config.rope_theta);
        if let Some(s) = &config.rope_scaling {
            let old_ctx = s.original_max_position_embeddings as f64;
            let low_wavelen = old_ctx / f64::from(s.low_freq_factor);
            let high_wavelen = old_ctx / f64::from(s.high_freq_factor);
            let factor = f64::from(s.factor);
            for f in &mut freqs {
                let wavelen = 2.0 * std::f64::consts::PI / *f;
                if wavelen > low_wavelen {
                    *f /= factor;
                } else if wavelen >= high_wavelen {
                    let smooth = (old_ctx / wavelen - f64::from(s.low_freq_factor))
                        / f64::from(s.high_freq_factor - s.low_freq_factor);
                    *f = (1.0 - smooth) * *f / factor + smooth * *f;
                }
            }
        }
        Self { freqs }
    }

    /// Rotates pairs `(v[k], v[k + hd/2])` by `position * freq_k` in place.
    pub fn rotate(&self, v: &mut [f32], position: usize) {
        let half = v.len() / 2;
        debug_assert_eq!(half, self.freqs.len());
        for (k, &f) in self.freqs.iter().enumerate() {
            let angle = position as f64 * f;
            let (sin, cos) = angle.sin_cos();
            let (sin, cos) = (sin as f32, cos as f32);
            let (a, b) = (v[k], v[k + half]);
            v[k] = a * cos - b * sin;
            v[k + half] = a * sin + b * cos;
        }
    }
}

fn base_freqs(head_dim: usize, theta: f32) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|k| f64::from(theta).powf(-2.0 * k as f64 / head_dim as f64))
        .collect()
}

/// Rotary position embedding of one head vector with frequencies
/// `theta^(-2k/hd)`. Position 0 is the identity.
pub fn apply_rope(v: &[f32], position: usize, theta: f32) -> Result<Vec<f32>> {
    if v.len() % 2 != 0 {
        return Err(Error::Config(format!(
            "head dimension {} must be even for rotary embeddings",
            v.len()
        )));
    }
    let table = RopeTable {
        freqs: base_freqs(v.len(), theta),
    };
    let mut out = v.to_vec();
    table.rotate(&mut out, position);
    Ok(out)
}

/// Outputs of one attention sublayer.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `a^ℓ`, `T × d`.
    pub output: Matrix,
    pub head_mix: Vec<Matrix>,
    pub head_out: Vec<Matrix>,
    pub attention: Vec<Matrix>,
    pub values: Vec<Matrix>,
}

/// Attention sublayer of `layer` applied to the residual states `x_prev`,
/// with the given edges blocked.
pub fn attention_sublayer(
    weights: &Weights,
    x_prev: &Matrix,
    layer: usize,
    edge_masks: &[EdgeMaskSpec],
) -> Result<AttentionOutput> {
    let cfg = &weights.config;
    check_residual_shape(cfg, x_prev)?;
    let lw = layer_weights(weights, layer)?;
    let spec = InterventionSpec {
        edge_masks: edge_masks.to_vec(),
        ..Default::default()
    };
    let compiled = spec.compile(cfg, x_prev.rows())?;
    attention(cfg, lw, &RopeTable::new(cfg), x_prev, layer, &compiled, true)
}

/// MLP sublayer of `layer` for one residual vector (after the attention
/// update).
pub fn mlp_sublayer(weights: &Weights, x: &[f32], layer: usize) -> Result<Vec<f32>> {
    let lw = layer_weights(weights, layer)?;
    if x.len() != weights.config.hidden_dim {
        return Err(Error::Shape(format!(
            "mlp input width {} != hidden_dim {}",
            x.len(),
            weights.config.hidden_dim
        )));
    }
    Ok(mlp(&weights.config, lw, x))
}

fn layer_weights(weights: &Weights, layer: usize) -> Result<&LayerWeights> {
    weights.layers.get(layer).ok_or_else(|| {
        Error::InvalidInput(format!(
            "layer {layer} out of range (model has {})",
            weights.layers.len()
        ))
    })
}

fn check_residual_shape(cfg: &ModelConfig, x: &Matrix) -> Result<()> {
    if x.cols() != cfg.hidden_dim || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "residual states are {}×{}, expected T×{}",
            x.rows(),
            x.cols(),
            cfg.hidden_dim
        )));
    }
    Ok(())
}

fn mlp(cfg: &ModelConfig, lw: &LayerWeights, x: &[f32]) -> Vec<f32> {
    let h = rms_norm(x, &lw.mlp_norm, cfg.norm_eps);
    let gate = linear(&lw.w_gate, &h);
    let up = linear(&lw.w_up, &h);
    let act: Vec<f32> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
    linear(&lw.w_down, &act)
}

fn attention(
    cfg: &ModelConfig,
    lw: &LayerWeights,
    rope: &RopeTable,
    x: &Matrix,
    layer: usize,
    hooks: &CompiledInterventions<'_>,
    keep_heads: bool,
) -> Result<AttentionOutput> {
    let t_len = x.rows();
    let d = cfg.hidden_dim;
    let hd = cfg.head_dim();
    let n_heads = cfg.num_heads;
    let n_kv = cfg.num_kv_heads;

    let mut normed = Matrix::zeros(t_len, d);
    for i in 0..t_len {
        normed
            .row_mut(i)
            .copy_from_slice(&rms_norm(x.row(i), &lw.attn_norm, cfg.norm_eps));
    }
    let mut q = normed.matmul_t(&lw.wq);
    let mut k = normed.matmul_t(&lw.wk);
    let v = normed.matmul_t(&lw.wv);
    for i in 0..t_len {
        for h in 0..n_heads {
            rope.rotate(&mut q.row_mut(i)[h * hd..(h + 1) * hd], i);
        }
        for h in 0..n_kv {
            rope.rotate(&mut k.row_mut(i)[h * hd..(h + 1) * hd], i);
        }
    }

    let scale = 1.0 / (hd as f32).sqrt();
    let masked_layer = hooks.layer_has_masks(layer);
    let mut output = Matrix::zeros(t_len, d);
    let mut head_mix = Vec::new();
    let mut head_out = Vec::new();
    let mut attention = Vec::new();
    let mut contrib = vec![0.0f32; d];
    let mut scores = vec![0.0f32; t_len];

    for h in 0..n_heads {
        let kv = cfg.kv_head(h);
        let mut pattern = Matrix::zeros(t_len, t_len);
        let mut mix = Matrix::zeros(t_len, hd);
        let mut out_h = if keep_heads { Matrix::zeros(t_len, d) } else { Matrix::zeros(0, d) };
        for i in 0..t_len {
            let qi = &q.row(i)[h * hd..(h + 1) * hd];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                *s = if masked_layer && hooks.is_masked(layer, h, i, j) {
                    f32::NEG_INFINITY
                } else {
                    dot(qi, &k.row(j)[kv * hd..(kv + 1) * hd]) * scale
                };
                max = max.max(*s);
            }
            if max == f32::NEG_INFINITY {
                return Err(Error::InvalidIntervention(format!(
                    "layer {layer} head {h}: every key of query {i} is masked"
                )));
            }
            let mut total = 0.0f32;
            for (j, s) in scores.iter().enumerate().take(i + 1) {
                let e = if *s == f32::NEG_INFINITY { 0.0 } else { (s - max).exp() };
                pattern.set(i, j, e);
                total += e;
            }
            let row = pattern.row_mut(i);
            for w in row.iter_mut().take(i + 1) {
                *w /= total;
            }
            let m = mix.row_mut(i);
            for j in 0..=i {
                let w = pattern.get(i, j);
                if w != 0.0 {
                    for (acc, val) in m.iter_mut().zip(&v.row(j)[kv * hd..(kv + 1) * hd]) {
                        *acc += w * val;
                    }
                }
            }
            for (o, c) in contrib.iter_mut().enumerate() {
                *c = dot(&lw.wo.row(o)[h * hd..(h + 1) * hd], mix.row(i));
            }
            hooks.apply(HookPoint::head_output(layer, i, h), &mut contrib);
            add_assign(output.row_mut(i), &contrib);
            if keep_heads {
                out_h.row_mut(i).copy_from_slice(&contrib);
            }
        }
        if keep_heads {
            head_mix.push(mix);
            head_out.push(out_h);
            attention.push(pattern);
        }
    }

    let values = if keep_heads {
        (0..n_kv)
            .map(|h| {
                let mut m = Matrix::zeros(t_len, hd);
                for i in 0..t_len {
                    m.row_mut(i).copy_from_slice(&v.row(i)[h * hd..(h + 1) * hd]);
                }
                m
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(AttentionOutput {
        output,
        head_mix,
        head_out,
        attention,
        values,
    })
}

/// Runs the model over `tokens`, applying `interventions` at their hook
/// points, and returns the recorded activations and final logits.
pub fn forward(
    weights: &Weights,
    tokens: &[u32],
    interventions: Option<&InterventionSpec>,
    options: ForwardOptions,
) -> Result<ActivationRecord> {
    let x = embed(weights, tokens)?;
    run_layers(weights, tokens, x, 0, interventions, options)
}

/// Final-position logits of a run that shares `base`'s computation up to
/// layer `start` and re-executes layers `start..` with `interventions`.
///
/// `base` must have been recorded without interventions below `start` and
/// with at least [`Capture::Sublayers`]; interventions below `start` are
/// rejected. The result equals a full [`forward`] bit for bit.
pub fn logits_from(
    weights: &Weights,
    base: &ActivationRecord,
    start: usize,
    interventions: Option<&InterventionSpec>,
) -> Result<Vec<f32>> {
    if let Some(first) = interventions.and_then(InterventionSpec::first_layer) {
        if first < start {
            return Err(Error::InvalidIntervention(format!(
                "intervention at layer {first} precedes resume layer {start}"
            )));
        }
    }
    if start == weights.config.num_layers {
        let x = base.layers.last().ok_or_else(|| Error::InvalidInput("base record has no layers".into()))?;
        return Ok(unembed(weights, x.resid_out.row(base.seq_len() - 1)));
    }
    let x = base
        .layers
        .get(start)
        .ok_or_else(|| Error::InvalidInput(format!("base record has no layer {start}")))?
        .resid_in
        .clone();
    Ok(run_layers(weights, &base.tokens, x, start, interventions, ForwardOptions::logits_only())?.logits)
}

fn run_layers(
    weights: &Weights,
    tokens: &[u32],
    mut x: Matrix,
    start: usize,
    interventions: Option<&InterventionSpec>,
    options: ForwardOptions,
) -> Result<ActivationRecord> {
    let cfg = &weights.config;
    let t_len = tokens.len();
    check_residual_shape(cfg, &x)?;
    if x.rows() != t_len {
        return Err(Error::Shape(format!("{} residual rows for {t_len} tokens", x.rows())));
    }
    let empty = InterventionSpec::new();
    let hooks = interventions.unwrap_or(&empty).compile(cfg, t_len)?;
    let rope = RopeTable::new(cfg);
    let keep_heads = options.capture == Capture::Full;
    let keep_layers = options.capture != Capture::LogitsOnly;

    let mut layers = Vec::with_capacity(if keep_layers { cfg.num_layers } else { 0 });
    for (l, lw) in weights.layers.iter().enumerate().skip(start) {
        let attn = attention(cfg, lw, &rope, &x, l, &hooks, keep_heads)?;
        let mut a = attn.output;
        let mut m = Matrix::zeros(t_len, cfg.hidden_dim);
        let mut next = Matrix::zeros(t_len, cfg.hidden_dim);
        for i in 0..t_len {
            hooks.apply(HookPoint::attn_output(l, i), a.row_mut(i));
            let mid: Vec<f32> = x.row(i).iter().zip(a.row(i)).map(|(p, q)| p + q).collect();
            let mut mo = mlp(cfg, lw, &mid);
            hooks.apply(HookPoint::mlp_output(l, i), &mut mo);
            let out = next.row_mut(i);
            for ((o, p), q) in out.iter_mut().zip(&mid).zip(&mo) {
                *o = p + q;
            }
            hooks.apply(HookPoint::residual(l, i), out);
            m.row_mut(i).copy_from_slice(&mo);
        }
        let resid_in = std::mem::replace(&mut x, next);
        if keep_layers {
            layers.push(LayerRecord {
                resid_in,
                attn_out: a,
                mlp_out: m,
                resid_out: x.clone(),
                head_mix: attn.head_mix,
                head_out: attn.head_out,
                attention: attn.attention,
                values: attn.values,
            });
        }
    }

    let logits = unembed(weights, x.row(t_len - 1));
    let all_logits = options.all_logits.then(|| {
        let rows: Vec<Vec<f32>> = (0..t_len).map(|i| unembed(weights, x.row(i))).collect();
        Matrix::from_rows(&rows)
    });
    Ok(ActivationRecord {
        tokens: tokens.to_vec(),
        layers,
        logits,
        all_logits,
    })
}

/// `W_U · RMSNorm_final(x)`.
pub fn unembed(weights: &Weights, x: &[f32]) -> Vec<f32> {
    let h = rms_norm(x, &weights.final_norm, weights.config.norm_eps);
    linear(weights.unembedding(), &h)
}

/// Final-position logits without keeping any activations.
pub fn logits(weights: &Weights, tokens: &[u32], interventions: Option<&InterventionSpec>) -> Result<Vec<f32>> {
    Ok(forward(weights, tokens, interventions, ForwardOptions::logits_only())?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_norm_of_zero_is_zero() {
        assert_eq!(rms_norm(&[0.0; 4], &[2.0; 4], 1e-5), vec![0.0; 4]);
    }

    #[test]
    fn rms_norm_unit_rms_is_identity() {
        let y = rms_norm(&[1.0; 4], &[1.0; 4], 1e-12);
        for v in y {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let v = [0.3, -1.2, 4.0, 0.5];
        assert_eq!(apply_rope(&v, 0, 10_000.0).unwrap(), v.to_vec());
    }

    #[test]
    fn rope_two_dims_is_planar_rotation() {
        let p = 3usize;
        let out = apply_rope(&[1.0, 0.0], p, 123.0).unwrap();
        let angle = p as f32;
        assert!((out[0] - angle.cos()).abs() < 1e-6);
        assert!((out[1] - angle.sin()).abs() < 1e-6);
    }

    #[test]
    fn rope_rejects_odd_dimension() {
        assert!(matches!(apply_rope(&[1.0, 2.0, 3.0], 1, 10.0), Err(Error::Config(_))));
    }

    #[test]
    fn embed_rejects_out_of_vocab() {
        let cfg = ModelConfig::tiny(1, 4, 1, 1, 4, 5);
        let w = Weights::random(&cfg, 0).unwrap();
        assert!(matches!(embed(&w, &[5]), Err(Error::InvalidInput(_))));
        assert!(matches!(embed(&w, &[]), Err(Error::InvalidInput(_))));
        let e = embed(&w, &[3, 3]).unwrap();
        assert_eq!(e.row(0), e.row(1));
        assert_eq!(e.row(0), w.embedding.row(3));
    }

    #[test]
    fn single_token_attends_to_itself() {
        let cfg = ModelConfig::tiny(1, 8, 2, 1, 8, 6);
        let w = Weights::random(&cfg, 3).unwrap();
        let x = embed(&w, &[4]).unwrap();
        let out = attention_sublayer(&w, &x, 0, &[]).unwrap();
        for a in &out.attention {
            assert_eq!(a.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn masking_all_but_self_gives_one_hot_row() {
        let cfg = ModelConfig::tiny(1, 8, 2, 2, 8, 6);
        let w = Weights::random(&cfg, 3).unwrap();
        let x = embed(&w, &[1, 2, 3, 4]).unwrap();
        let masks: Vec<EdgeMaskSpec> = (0..3)
            .map(|j| EdgeMaskSpec {
                layer: 0,
                query_position: 3,
                key_position: j,
                heads: Default::default(),
            })
            .collect();
        let out = attention_sublayer(&w, &x, 0, &masks).unwrap();
        for a in &out.attention {
            assert_eq!(a.row(3), &[0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let cfg = ModelConfig::tiny(1, 4, 1, 1, 4, 6);
        let w = Weights::random(&cfg, 3).unwrap();
        let x = embed(&w, &[1, 2]).unwrap();
        let masks: Vec<EdgeMaskSpec> = (0..2)
            .map(|j| EdgeMaskSpec {
                layer: 0,
                query_position: 1,
                key_position: j,
                heads: Default::default(),
            })
            .collect();
        assert!(attention_sublayer(&w, &x, 0, &masks).is_err());
    }

    #[test]
    fn zero_mlp_weights_give_zero_output() {
        let cfg = ModelConfig::tiny(1, 4, 1, 1, 8, 6);
        let mut w = Weights::random(&cfg, 3).unwrap();
        let x = [0.5, -1.0, 2.0, 0.1];
        assert_eq!(mlp_sublayer(&w, &[0.0; 4], 0).unwrap(), vec![0.0; 4]);
        w.layers[0].w_down = Matrix::zeros(4, 8);
        assert_eq!(mlp_sublayer(&w, &x, 0).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::tiny(2, 8, 2, 1, 16, 20);
        let w = Weights::random(&cfg, 11).unwrap();
        let a = forward(&w, &[1, 5, 7], Some(&InterventionSpec::new()), ForwardOptions::full()).unwrap();
        let b = forward(&w, &[1, 5, 7], None, ForwardOptions::full()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn llama3_scaling_keeps_high_frequencies() {
        let mut cfg = ModelConfig::tiny(1, 128, 2, 1, 8, 6);
        cfg.rope_theta = 500_000.0;
        let plain = RopeTable::new(&cfg);
        cfg.rope_scaling = Some(crate::model::RopeScaling {
            factor: 32.0,
            low_freq_factor: 1.0,
            high_freq_factor: 4.0,
            original_max_position_embeddings: 8192,
        });
        let scaled = RopeTable::new(&cfg);
        assert_eq!(plain.freqs[0], scaled.freqs[0]);
        let last = plain.freqs.len() - 1;
        assert!((scaled.freqs[last] - plain.freqs[last] / 32.0).abs() < 1e-15);
    }
}
