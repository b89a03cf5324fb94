// SPDX-License-Identifier: MIT OR Apache-2.0

//! Browser demo: a seeded tiny decoder with synthetic idiom sentences.
//!
//! Three operations back the page: an attention pattern with optional edge
//! masks, a per-layer sublayer knockout sweep, and mutual-kNN alignment of a
//! point cloud against a rotated, increasingly noisy copy. Each returns JSON
//! so the page can draw it on a canvas.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use resid_scope::dataset::{IdiomInstance, Variant};
use resid_scope::harness::{run_sublayer_knockout, Experiment, ExperimentConfig, Inputs, Sublayer};
use resid_scope::interventions::{EdgeMaskSpec, HeadSelection, InterventionSpec, KnockoutMode};
use resid_scope::metrics::{kernel_alignment, DELTA_F, DELTA_L};
use resid_scope::model::{forward, ForwardOptions, ModelConfig, Weights};
use resid_scope::synth::synthetic_instances;

const INSTANCES: usize = 12;
const RESAMPLES: usize = 200;

fn demo_config() -> ModelConfig {
    ModelConfig::tiny(4, 16, 4, 2, 32, 48)
}

#[derive(Debug, Serialize)]
pub struct AttentionView {
    pub tokens: Vec<u32>,
    /// Role of each position: `prefix`, `idiom`, `because`, `suffix`.
    pub roles: Vec<&'static str>,
    /// Row-major `T × T` post-softmax weights.
    pub pattern: Vec<Vec<f32>>,
    pub blocked: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize)]
pub struct SweepView {
    pub layers: Vec<usize>,
    pub delta_f: Vec<[f64; 3]>,
    pub delta_l: Vec<[f64; 3]>,
    pub significant: Vec<bool>,
}

#[derive(Debug, Serialize)]
pub struct AlignmentView {
    pub noise: Vec<f64>,
    pub alignment: Vec<f64>,
    /// Expected overlap of unrelated neighbourhoods, `k / (n - 1)`.
    pub baseline: f64,
}

pub struct Lab {
    weights: Weights,
    instances: Vec<IdiomInstance>,
}

impl Lab {
    pub fn new(seed: u64) -> Result<Self, String> {
        let cfg = demo_config();
        let weights = Weights::random(&cfg, seed).map_err(|e| e.to_string())?;
        let instances = synthetic_instances(&cfg, INSTANCES, seed ^ 0x5eed).map_err(|e| e.to_string())?;
        Ok(Self { weights, instances })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.config.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.weights.config.num_heads
    }

    /// Attention of `head` in `layer` on the first sentence, with the
    /// `(query, key)` edges in `blocked` masked in that head.
    pub fn attention(&self, layer: usize, head: usize, blocked: &[(usize, usize)]) -> Result<AttentionView, String> {
        let inst = &self.instances[0];
        let tokens = inst.tokens(Variant::Ambiguous);
        let spec = InterventionSpec {
            edge_masks: blocked
                .iter()
                .map(|&(q, k)| EdgeMaskSpec {
                    layer,
                    query_position: q,
                    key_position: k,
                    heads: HeadSelection::Subset(vec![head]),
                })
                .collect(),
            ..Default::default()
        };
        let rec = forward(&self.weights, tokens, Some(&spec), ForwardOptions::full()).map_err(|e| e.to_string())?;
        let a = rec
            .layers
            .get(layer)
            .and_then(|l| l.attention.get(head))
            .ok_or_else(|| format!("no head {head} in layer {layer}"))?;
        let [start, end] = inst.idiom_span;
        let roles = (0..tokens.len())
            .map(|i| match i {
                _ if i < start => "prefix",
                _ if i < end => "idiom",
                _ if i == inst.subsequent_token_index => "because",
                _ => "suffix",
            })
            .collect();
        Ok(AttentionView {
            tokens: tokens.to_vec(),
            roles,
            pattern: a.iter_rows().map(<[f32]>::to_vec).collect(),
            blocked: blocked.to_vec(),
        })
    }

    /// Knocks out the attention or MLP output at the idiom span, one layer
    /// at a time, across all demo sentences.
    pub fn knockout_sweep(&self, attention: bool, zero: bool) -> Result<SweepView, String> {
        let mut cfg = ExperimentConfig::new(Experiment::SublayerKnockout);
        cfg.target = if attention { Sublayer::Attn } else { Sublayer::Mlp };
        cfg.mode = if zero { KnockoutMode::Zero } else { KnockoutMode::Mean };
        cfg.resamples = RESAMPLES;
        let sweep = run_sublayer_knockout(&Inputs::new(&self.weights, &self.instances), &cfg).map_err(|e| e.to_string())?;
        let triple = |c: &resid_scope::metrics::SweepCell, m: &str| {
            c.metric(m).map(|s| [s.mean, s.ci_lo, s.ci_hi]).unwrap_or([0.0; 3])
        };
        Ok(SweepView {
            layers: sweep.cells.iter().filter_map(|c| c.layer).collect(),
            delta_f: sweep.cells.iter().map(|c| triple(c, DELTA_F)).collect(),
            delta_l: sweep.cells.iter().map(|c| triple(c, DELTA_L)).collect(),
            significant: sweep.cells.iter().map(|c| c.significant).collect(),
        })
    }
}

/// Alignment between `n` Gaussian points and a randomly rotated copy with
/// additive noise of increasing scale.
pub fn alignment_vs_noise(seed: u64, n: usize, k: usize, steps: usize) -> Result<AlignmentView, String> {
    const DIM: usize = 8;
    if n <= k + 1 || steps < 2 {
        return Err(format!("need n > k + 1 and at least 2 steps (n={n}, k={k}, steps={steps})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let points: Vec<Vec<f64>> = (0..n).map(|_| gauss(DIM)).collect();
    // Gram-Schmidt on Gaussian rows gives a uniformly random rotation.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(DIM);
    while basis.len() < DIM {
        let mut v = gauss(DIM);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let rotated: Vec<Vec<f64>> = points
        .iter()
        .map(|p| basis.iter().map(|b| b.iter().zip(p).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let noise: Vec<Vec<f64>> = (0..n).map(|_| gauss(DIM)).collect();
    let a: Vec<Vec<f32>> = points.iter().map(|p| p.iter().map(|&x| x as f32).collect()).collect();
    let max_sigma = 3.0;
    let mut sigmas = Vec::with_capacity(steps);
    let mut alignment = Vec::with_capacity(steps);
    for s in 0..steps {
        let sigma = max_sigma * s as f64 / (steps - 1) as f64;
        let b: Vec<Vec<f32>> = rotated
            .iter()
            .zip(&noise)
            .map(|(r, e)| r.iter().zip(e).map(|(x, z)| (x + sigma * z) as f32).collect())
            .collect();
        alignment.push(kernel_alignment(&a, &b, k).map_err(|e| e.to_string())?);
        sigmas.push(sigma);
    }
    Ok(AlignmentView {
        noise: sigmas,
        alignment,
        baseline: k as f64 / (n - 1) as f64,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

/// Handle to a seeded demo model.
#[wasm_bindgen]
pub struct Demo {
    lab: Lab,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsValue> {
        Lab::new(u64::from(seed)).map(|lab| Demo { lab }).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(getter, js_name = numLayers)]
    pub fn num_layers(&self) -> usize {
        self.lab.num_layers()
    }

    #[wasm_bindgen(getter, js_name = numHeads)]
    pub fn num_heads(&self) -> usize {
        self.lab.num_heads()
    }

    /// `blocked` is a flat list of `query, key` pairs.
    pub fn attention(&self, layer: usize, head: usize, blocked: Vec<u32>) -> Result<String, JsValue> {
        let pairs: Vec<(usize, usize)> = blocked.chunks_exact(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        to_js(self.lab.attention(layer, head, &pairs))
    }

    #[wasm_bindgen(js_name = knockoutSweep)]
    pub fn knockout_sweep(&self, attention: bool, zero: bool) -> Result<String, JsValue> {
        to_js(self.lab.knockout_sweep(attention, zero))
    }
}

#[wasm_bindgen(js_name = alignmentVsNoise)]
pub fn alignment_vs_noise_js(seed: u32, n: usize, k: usize, steps: usize) -> Result<String, JsValue> {
    to_js(alignment_vs_noise(u64::from(seed), n, k, steps))
}
