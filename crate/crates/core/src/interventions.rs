// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative knockouts, activation patches and attention-edge masks.
//!
//! An [`InterventionSpec`] is built ahead of a forward pass and consulted at
//! each hook point while the pass runs:
//!
//! - edge masks set the pre-softmax score of a query→key pair to `-inf`;
//! - knockouts replace an activation with zero or a dataset mean;
//! - patches replace an activation with a vector recorded from another run.
//!
//! Replacement happens before the activation enters the residual sum, so
//! everything downstream is recomputed normally. A coordinate may be targeted
//! by at most one knockout or patch.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{IdiomInstance, Variant};
use crate::error::{Error, Result};
use crate::model::{forward, ActivationRecord, ForwardOptions, ModelConfig, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookKind {
    /// Residual state leaving a layer, `x_i^ℓ`.
    Residual,
    /// Attention sublayer output, `a_i^ℓ`.
    AttnOutput,
    /// MLP sublayer output, `m_i^ℓ`.
    MlpOutput,
    /// One head's contribution to `a_i^ℓ` after its output-projection slice.
    HeadOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HookPoint {
    pub kind: HookKind,
    pub layer: usize,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

impl HookPoint {
    pub fn residual(layer: usize, position: usize) -> Self {
        Self { kind: HookKind::Residual, layer, position, head: None }
    }

    pub fn attn_output(layer: usize, position: usize) -> Self {
        Self { kind: HookKind::AttnOutput, layer, position, head: None }
    }

    pub fn mlp_output(layer: usize, position: usize) -> Self {
        Self { kind: HookKind::MlpOutput, layer, position, head: None }
    }

    pub fn head_output(layer: usize, position: usize, head: usize) -> Self {
        Self { kind: HookKind::HeadOutput, layer, position, head: Some(head) }
    }

    /// Same hook at a different position.
    pub fn at(self, position: usize) -> Self {
        Self { position, ..self }
    }

    pub fn validate(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        if self.layer >= config.num_layers {
            return Err(Error::InvalidIntervention(format!(
                "layer {} out of range (model has {})",
                self.layer, config.num_layers
            )));
        }
        if self.position >= seq_len {
            return Err(Error::InvalidIntervention(format!(
                "position {} out of range (sequence length {seq_len})",
                self.position
            )));
        }
        match (self.kind, self.head) {
            (HookKind::HeadOutput, Some(h)) if h < config.num_heads => Ok(()),
            (HookKind::HeadOutput, Some(h)) => Err(Error::InvalidIntervention(format!(
                "head {h} out of range (model has {})",
                config.num_heads
            ))),
            (HookKind::HeadOutput, None) => Err(Error::InvalidIntervention(
                "head_output hook requires a head index".into(),
            )),
            (_, Some(_)) => Err(Error::InvalidIntervention(format!(
                "{:?} hook must not carry a head index",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnockoutMode {
    Zero,
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knockout {
    pub hook: HookPoint,
    pub mode: KnockoutMode,
    /// Replacement vector; `None` means zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub hook: HookPoint,
    /// Position in the source run the vector was copied from.
    pub source_position: usize,
    pub value: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadSelection {
    #[default]
    All,
    Subset(Vec<usize>),
}

impl HeadSelection {
    pub fn contains(&self, head: usize) -> bool {
        match self {
            Self::All => true,
            Self::Subset(h) => h.contains(&head),
        }
    }
}

/// Blocks `query_position` from attending to `key_position` in the attention
/// sublayer of `layer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeMaskSpec {
    pub layer: usize,
    pub query_position: usize,
    pub key_position: usize,
    #[serde(default)]
    pub heads: HeadSelection,
}

impl EdgeMaskSpec {
    pub fn validate(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        if self.key_position > self.query_position {
            return Err(Error::InvalidIntervention(format!(
                "non-causal edge {} -> {}: key must not follow query",
                self.query_position, self.key_position
            )));
        }
        if self.layer >= config.num_layers {
            return Err(Error::InvalidIntervention(format!(
                "edge mask layer {} out of range",
                self.layer
            )));
        }
        if self.query_position >= seq_len {
            return Err(Error::InvalidIntervention(format!(
                "edge mask query position {} out of range (sequence length {seq_len})",
                self.query_position
            )));
        }
        if let HeadSelection::Subset(heads) = &self.heads {
            if let Some(h) = heads.iter().find(|&&h| h >= config.num_heads) {
                return Err(Error::InvalidIntervention(format!("edge mask head {h} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionSpec {
    #[serde(default)]
    pub knockouts: Vec<Knockout>,
    #[serde(default)]
    pub patches: Vec<Patch>,
    #[serde(default)]
    pub edge_masks: Vec<EdgeMaskSpec>,
}

impl InterventionSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.knockouts.is_empty() && self.patches.is_empty() && self.edge_masks.is_empty()
    }

    /// Appends all fragments of `other`.
    pub fn extend(&mut self, other: InterventionSpec) {
        self.knockouts.extend(other.knockouts);
        self.patches.extend(other.patches);
        self.edge_masks.extend(other.edge_masks);
    }

    pub fn with(mut self, other: InterventionSpec) -> Self {
        self.extend(other);
        self
    }

    /// Lowest layer any fragment touches.
    pub fn first_layer(&self) -> Option<usize> {
        let k = self.knockouts.iter().map(|k| k.hook.layer);
        let p = self.patches.iter().map(|p| p.hook.layer);
        let m = self.edge_masks.iter().map(|m| m.layer);
        k.chain(p).chain(m).min()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Validates against a model and sequence length and indexes the spec for
    /// lookup during the forward pass.
    pub(crate) fn compile(&self, config: &ModelConfig, seq_len: usize) -> Result<CompiledInterventions<'_>> {
        let d = config.hidden_dim;
        let mut replacements: HashMap<HookPoint, Option<&[f32]>> = HashMap::new();
        for k in &self.knockouts {
            k.hook.validate(config, seq_len)?;
            if let Some(v) = &k.value {
                check_width(&k.hook, v.len(), d)?;
            } else if k.mode == KnockoutMode::Mean {
                return Err(Error::InvalidIntervention(format!(
                    "mean knockout at {:?} has no resolved mean vector",
                    k.hook
                )));
            }
            if replacements.insert(k.hook, k.value.as_deref()).is_some() {
                return Err(conflict(&k.hook));
            }
        }
        for p in &self.patches {
            p.hook.validate(config, seq_len)?;
            check_width(&p.hook, p.value.len(), d)?;
            if replacements.insert(p.hook, Some(&p.value)).is_some() {
                return Err(conflict(&p.hook));
            }
        }
        let mut masks: Vec<Vec<&EdgeMaskSpec>> = vec![Vec::new(); config.num_layers];
        for m in &self.edge_masks {
            m.validate(config, seq_len)?;
            masks[m.layer].push(m);
        }
        Ok(CompiledInterventions { replacements, masks })
    }
}

fn check_width(hook: &HookPoint, got: usize, d: usize) -> Result<()> {
    if got != d {
        return Err(Error::Shape(format!(
            "replacement for {hook:?} has width {got}, model width is {d}"
        )));
    }
    Ok(())
}

fn conflict(hook: &HookPoint) -> Error {
    Error::InvalidIntervention(format!("conflicting interventions at {hook:?}"))
}

/// Lookup tables derived from an [`InterventionSpec`] for one forward pass.
#[derive(Debug, Default)]
pub(crate) struct CompiledInterventions<'a> {
    replacements: HashMap<HookPoint, Option<&'a [f32]>>,
    masks: Vec<Vec<&'a EdgeMaskSpec>>,
}

impl CompiledInterventions<'_> {
    /// Overwrites `target` if an intervention addresses `hook`.
    #[inline]
    pub(crate) fn apply(&self, hook: HookPoint, target: &mut [f32]) -> bool {
        if self.replacements.is_empty() {
            return false;
        }
        match self.replacements.get(&hook) {
            Some(Some(v)) => {
                target.copy_from_slice(v);
                true
            }
            Some(None) => {
                target.fill(0.0);
                true
            }
            None => false,
        }
    }

    pub(crate) fn is_masked(&self, layer: usize, head: usize, query: usize, key: usize) -> bool {
        self.masks.get(layer).is_some_and(|ms| {
            ms.iter()
                .any(|m| m.query_position == query && m.key_position == key && m.heads.contains(head))
        })
    }

    pub(crate) fn layer_has_masks(&self, layer: usize) -> bool {
        self.masks.get(layer).is_some_and(|m| !m.is_empty())
    }
}

// ---------------------------------------------------------------------------
// Position roles and mean caches
// ---------------------------------------------------------------------------

/// Template-relative role of a token position, used to align positions
/// across sentences of different lengths.
///
/// Positions before the idiom span are counted from the sentence start,
/// span positions from the span's last token backwards, and positions after
/// the span from the subsequent token forwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionRole {
    Prefix(usize),
    SpanFromEnd(usize),
    AfterSpan(usize),
}

impl PositionRole {
    pub fn of(position: usize, span: (usize, usize)) -> Self {
        let (start, end) = span;
        if position < start {
            Self::Prefix(position)
        } else if position < end {
            Self::SpanFromEnd(end - 1 - position)
        } else {
            Self::AfterSpan(position - end)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeanKey {
    pub kind: HookKind,
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub role: PositionRole,
}

/// Mean activation per `(kind, layer, head, role)` over a set of runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanCache {
    means: BTreeMap<MeanKey, Vec<f32>>,
    counts: BTreeMap<MeanKey, usize>,
}

impl MeanCache {
    pub fn get(&self, key: &MeanKey) -> Option<&[f32]> {
        self.means.get(key).map(Vec::as_slice)
    }

    pub fn count(&self, key: &MeanKey) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Mean for `hook` in a sequence whose idiom span is `span`.
    pub fn lookup(&self, hook: &HookPoint, span: (usize, usize)) -> Option<&[f32]> {
        self.get(&MeanKey {
            kind: hook.kind,
            layer: hook.layer,
            head: hook.head,
            role: PositionRole::of(hook.position, span),
        })
    }

    /// Builds the cache from recorded runs, each paired with its idiom span.
    ///
    /// Records must carry per-head tensors for head means to be produced.
    /// Sums are accumulated in `f64` in record order.
    pub fn from_records<'a, I>(runs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a ActivationRecord, (usize, usize))>,
    {
        let mut acc = MeanAccumulator::default();
        for (record, span) in runs {
            acc.add(record, span);
        }
        acc.finish()
    }
}

#[derive(Default)]
struct MeanAccumulator {
    sums: BTreeMap<MeanKey, Vec<f64>>,
    counts: BTreeMap<MeanKey, usize>,
    runs: usize,
}

impl MeanAccumulator {
    fn add(&mut self, record: &ActivationRecord, span: (usize, usize)) {
        self.runs += 1;
        for (layer, lr) in record.layers.iter().enumerate() {
            for pos in 0..record.seq_len() {
                let role = PositionRole::of(pos, span);
                let mut add = |kind, head, v: &[f32]| {
                    let key = MeanKey { kind, layer, head, role };
                    let acc = self.sums.entry(key).or_insert_with(|| vec![0.0; v.len()]);
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += f64::from(*x);
                    }
                    *self.counts.entry(key).or_insert(0) += 1;
                };
                add(HookKind::Residual, None, lr.resid_out.row(pos));
                add(HookKind::AttnOutput, None, lr.attn_out.row(pos));
                add(HookKind::MlpOutput, None, lr.mlp_out.row(pos));
                for (h, m) in lr.head_out.iter().enumerate() {
                    add(HookKind::HeadOutput, Some(h), m.row(pos));
                }
            }
        }
    }

    fn finish(self) -> Result<MeanCache> {
        if self.runs == 0 {
            return Err(Error::InvalidInput("mean cache needs at least one instance".into()));
        }
        let counts = self.counts;
        let means = self
            .sums
            .into_iter()
            .map(|(k, s)| {
                let n = counts[&k] as f64;
                (k, s.into_iter().map(|x| (x / n) as f32).collect())
            })
            .collect();
        Ok(MeanCache { means, counts })
    }
}

/// Instances run concurrently per batch when building a mean cache.
const MEAN_BATCH: usize = 16;

/// Runs every instance's `variant` sentence and averages its activations by
/// position role. Records are folded in batches so memory stays bounded.
pub fn compute_mean_cache(weights: &Weights, instances: &[IdiomInstance], variant: Variant) -> Result<MeanCache> {
    if instances.is_empty() {
        return Err(Error::InvalidInput("mean cache needs at least one instance".into()));
    }
    let mut acc = MeanAccumulator::default();
    for batch in instances.chunks(MEAN_BATCH) {
        let records = crate::par::try_map(batch, |inst| {
            let span = inst.span(variant)?;
            Ok((forward(weights, inst.tokens(variant), None, ForwardOptions::full())?, span))
        })?;
        for (record, span) in &records {
            acc.add(record, *span);
        }
    }
    acc.finish()
}

// ---------------------------------------------------------------------------
// Fragment builders
// ---------------------------------------------------------------------------

/// Knockout fragment for `targets`.
///
/// Mean-mode targets resolve their replacement from `cache`, aligned by the
/// role each position plays relative to `span` in the target sequence.
pub fn knockout(
    targets: &[(HookPoint, KnockoutMode)],
    cache: Option<(&MeanCache, (usize, usize))>,
) -> Result<InterventionSpec> {
    let mut spec = InterventionSpec::new();
    for &(hook, mode) in targets {
        let value = match mode {
            KnockoutMode::Zero => None,
            KnockoutMode::Mean => {
                let (cache, span) = cache.ok_or_else(|| {
                    Error::InvalidIntervention("mean knockout requires a mean cache".into())
                })?;
                let mean = cache.lookup(&hook, span).ok_or_else(|| {
                    Error::InvalidIntervention(format!("mean cache has no entry for {hook:?}"))
                })?;
                Some(mean.to_vec())
            }
        };
        spec.knockouts.push(Knockout { hook, mode, value });
    }
    Ok(spec)
}

/// Patch `target` with the same kind of activation recorded at
/// `source_position` of `source`.
pub fn patch(target: HookPoint, source: &ActivationRecord, source_position: usize) -> Result<InterventionSpec> {
    patch_from(target, source, target.at(source_position))
}

/// Patch `target` with the activation recorded at `source_hook`; both hooks
/// must address the same kind of activation.
pub fn patch_from(target: HookPoint, source: &ActivationRecord, source_hook: HookPoint) -> Result<InterventionSpec> {
    if target.kind != source_hook.kind {
        return Err(Error::InvalidIntervention(format!(
            "patch kind mismatch: target {:?}, source {:?}",
            target.kind, source_hook.kind
        )));
    }
    let value = source.activation(&source_hook).ok_or_else(|| {
        Error::InvalidIntervention(format!("source record has no activation at {source_hook:?}"))
    })?;
    Ok(InterventionSpec {
        patches: vec![Patch {
            hook: target,
            source_position: source_hook.position,
            value: value.to_vec(),
        }],
        ..Default::default()
    })
}

pub fn mask_edges(spec: EdgeMaskSpec) -> Result<InterventionSpec> {
    if spec.key_position > spec.query_position {
        return Err(Error::InvalidIntervention(format!(
            "non-causal edge {} -> {}: key must not follow query",
            spec.query_position, spec.key_position
        )));
    }
    Ok(InterventionSpec {
        edge_masks: vec![spec],
        ..Default::default()
    })
}
