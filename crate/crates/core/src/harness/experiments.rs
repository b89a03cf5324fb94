// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{EdgeTarget, Experiment, ExperimentConfig, PatchSource, Sublayer};
use super::output::{summarize, ComparisonSummary, ConditionSamples, ExperimentOutput, ValidationReport};
use crate::dataset::{IdiomInstance, Variant};
use crate::dataset_builder::{build, validate_instance, BuildOptions, BuildRow, RowReport};
use crate::error::{Error, Result};
use crate::interventions::{
    compute_mean_cache, knockout, mask_edges, patch_from, EdgeMaskSpec, HeadSelection, HookKind, HookPoint,
    InterventionSpec, KnockoutMode, MeanCache,
};
use crate::io::embeddings::{EmbeddingTable, Meaning};
use crate::io::Tokenizer;
use crate::metrics::sweep::{DELTA_F, DELTA_L};
use crate::metrics::{
    aggregate, delta_i, derive_seed, head_value_cosine, interpretation_scores, kernel_alignment_items, rank_heads,
    AggregateOptions, CellSamples, HeadEffect, HeadId, HeadSets, InterpretationScore, ScoreDelta, SweepAxis,
    SweepResult,
};
use crate::model::{forward, logits_from, ActivationRecord, ForwardOptions, Weights};
use crate::par::try_map;

// Independent random streams derived from the run seed.
const BOOTSTRAP_STREAM: u64 = 1;
const RANK_STREAM: u64 = 2;
const CONTROL_STREAM: u64 = 3;
const DERANGEMENT_STREAM: u64 = 4;

/// Everything an experiment reads besides its config.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub weights: &'a Weights,
    pub instances: &'a [IdiomInstance],
    pub embeddings: Option<&'a EmbeddingTable>,
    pub head_sets: Option<&'a HeadSets>,
}

impl<'a> Inputs<'a> {
    pub fn new(weights: &'a Weights, instances: &'a [IdiomInstance]) -> Self {
        Self {
            weights,
            instances,
            embeddings: None,
            head_sets: None,
        }
    }

    pub fn with_embeddings(self, embeddings: &'a EmbeddingTable) -> Self {
        Self { embeddings: Some(embeddings), ..self }
    }

    pub fn with_head_sets(self, head_sets: &'a HeadSets) -> Self {
        Self { head_sets: Some(head_sets), ..self }
    }

    fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        cfg.validate(&self.weights.config)?;
        if self.instances.is_empty() {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        crate::dataset::check_dataset(self.instances, &self.weights.config)
    }

    fn head_sets(&self, what: &str) -> Result<&'a HeadSets> {
        let sets = self
            .head_sets
            .ok_or_else(|| Error::Config(format!("{what} requires a head-set file (--heads-file)")))?;
        sets.validate(self.weights.config.num_layers, self.weights.config.num_heads)?;
        Ok(sets)
    }
}

fn aggregate_options(cfg: &ExperimentConfig, compare: Option<(usize, usize)>) -> AggregateOptions {
    AggregateOptions {
        resamples: cfg.resamples,
        level: cfg.level,
        seed: derive_seed(cfg.seed, BOOTSTRAP_STREAM),
        compare,
        ..AggregateOptions::default()
    }
}

fn scores(logits: &[f32], inst: &IdiomInstance) -> Result<InterpretationScore> {
    interpretation_scores(logits, &inst.c_f, &inst.c_l)
}

/// Transposes per-instance per-cell deltas into `ΔF`/`ΔL` series per cell.
fn delta_cells(cells: &[(Option<usize>, Option<usize>)], per_instance: &[Vec<ScoreDelta>]) -> Vec<CellSamples> {
    cells
        .iter()
        .enumerate()
        .map(|(ci, &(layer, head))| CellSamples {
            layer,
            head,
            series: vec![
                (DELTA_F.into(), per_instance.iter().map(|d| d[ci].df).collect()),
                (DELTA_L.into(), per_instance.iter().map(|d| d[ci].dl).collect()),
            ],
        })
        .collect()
}

fn mean_cache(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<Option<MeanCache>> {
    match cfg.mode {
        KnockoutMode::Zero => Ok(None),
        KnockoutMode::Mean => compute_mean_cache(inputs.weights, inputs.instances, cfg.variant).map(Some),
    }
}

/// Per-layer knockout of the attention or MLP output at every idiom-span
/// position.
pub fn run_sublayer_knockout(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<SweepResult> {
    inputs.check(cfg)?;
    let w = inputs.weights;
    let layers: Vec<usize> = cfg.layer_range(&w.config)?.collect();
    let cache = mean_cache(inputs, cfg)?;
    let kind = match cfg.target {
        Sublayer::Mlp => HookKind::MlpOutput,
        Sublayer::Attn => HookKind::AttnOutput,
    };
    let per_instance = try_map(inputs.instances, |inst| {
        let span = inst.span(cfg.variant)?;
        let base = forward(w, inst.tokens(cfg.variant), None, ForwardOptions::sublayers())?;
        let s0 = scores(&base.logits, inst)?;
        layers
            .iter()
            .map(|&layer| {
                let targets: Vec<(HookPoint, KnockoutMode)> = (span.0..span.1)
                    .map(|position| (HookPoint { kind, layer, position, head: None }, cfg.mode))
                    .collect();
                let spec = knockout(&targets, cache.as_ref().map(|c| (c, span)))?;
                let z = logits_from(w, &base, layer, Some(&spec))?;
                Ok(delta_i(scores(&z, inst)?, s0))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells: Vec<_> = layers.iter().map(|&l| (Some(l), None)).collect();
    aggregate(SweepAxis::Layer, delta_cells(&cells, &per_instance), &aggregate_options(cfg, Some((0, 1))))
}

/// Knocks out each head at the idiom span, then ranks heads into sets.
pub fn run_head_scan(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<(SweepResult, HeadSets)> {
    inputs.check(cfg)?;
    let w = inputs.weights;
    let heads: Vec<HeadId> = cfg
        .layer_range(&w.config)?
        .flat_map(|l| (0..w.config.num_heads).map(move |h| (l, h)))
        .collect();
    if 3 * cfg.top_k > heads.len() {
        return Err(Error::Config(format!(
            "head-set size {} needs {} heads, the scanned layers have {}",
            cfg.top_k,
            3 * cfg.top_k,
            heads.len()
        )));
    }
    let cache = mean_cache(inputs, cfg)?;
    let per_instance = try_map(inputs.instances, |inst| {
        let span = inst.span(cfg.variant)?;
        let base = forward(w, inst.tokens(cfg.variant), None, ForwardOptions::sublayers())?;
        let s0 = scores(&base.logits, inst)?;
        heads
            .iter()
            .map(|&(layer, head)| {
                let targets: Vec<(HookPoint, KnockoutMode)> = (span.0..span.1)
                    .map(|p| (HookPoint::head_output(layer, p, head), cfg.mode))
                    .collect();
                let spec = knockout(&targets, cache.as_ref().map(|c| (c, span)))?;
                let z = logits_from(w, &base, layer, Some(&spec))?;
                Ok(delta_i(scores(&z, inst)?, s0))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells: Vec<_> = heads.iter().map(|&(l, h)| (Some(l), Some(h))).collect();
    let sweep = aggregate(SweepAxis::LayerHead, delta_cells(&cells, &per_instance), &aggregate_options(cfg, Some((0, 1))))?;
    let effects: Vec<HeadEffect> = sweep
        .cells
        .iter()
        .map(|c| HeadEffect {
            layer: c.layer.unwrap_or(0),
            head: c.head.unwrap_or(0),
            delta_f: c.metrics[0].mean,
            delta_l: c.metrics[1].mean,
        })
        .collect();
    let sets = rank_heads(&effects, cfg.top_k, derive_seed(cfg.seed, RANK_STREAM))?;
    Ok((sweep, sets))
}

/// Span positions of the source and target sentences paired from the span
/// ends, over the shorter of the two spans.
fn aligned_span_positions(source: (usize, usize), target: (usize, usize)) -> Vec<(usize, usize)> {
    let m = (source.1 - source.0).min(target.1 - target.0);
    (0..m).map(|i| (source.1 - 1 - i, target.1 - 1 - i)).collect()
}

/// MLP layers and heads patched by one condition of component patching.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
struct Components {
    mlp_layers: Vec<usize>,
    heads: Vec<HeadId>,
}

/// Seeded random components matching `exp` in count: MLP layers outside the
/// experiment's layers where possible, and for each head a head of the same
/// layer outside `exclude` where possible.
fn control_components(exp: &Components, num_layers: usize, num_heads: usize, exclude: &[HeadId], seed: u64) -> Components {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..num_layers).filter(|l| !exp.mlp_layers.contains(l)).collect();
    if pool.len() < exp.mlp_layers.len() {
        pool = (0..num_layers).collect();
    }
    pool.shuffle(&mut rng);
    let mut mlp_layers: Vec<usize> = pool.into_iter().take(exp.mlp_layers.len()).collect();
    mlp_layers.sort_unstable();

    let excluded: BTreeSet<HeadId> = exclude.iter().chain(&exp.heads).copied().collect();
    let mut chosen: BTreeSet<HeadId> = BTreeSet::new();
    for &(layer, _) in &exp.heads {
        let free = |id: &HeadId| !excluded.contains(id) && !chosen.contains(id);
        let same_layer: Vec<HeadId> = (0..num_heads).map(|h| (layer, h)).filter(free).collect();
        let pick = if same_layer.is_empty() {
            let any: Vec<HeadId> = (0..num_layers)
                .flat_map(|l| (0..num_heads).map(move |h| (l, h)))
                .filter(free)
                .collect();
            if any.is_empty() {
                continue;
            }
            any[rng.random_range(0..any.len())]
        } else {
            same_layer[rng.random_range(0..same_layer.len())]
        };
        chosen.insert(pick);
    }
    Components {
        mlp_layers,
        heads: chosen.into_iter().collect(),
    }
}

fn component_spec(c: &Components, source: &ActivationRecord, pairs: &[(usize, usize)]) -> Result<InterventionSpec> {
    let mut spec = InterventionSpec::new();
    for &layer in &c.mlp_layers {
        for &(src, tgt) in pairs {
            spec.extend(patch_from(HookPoint::mlp_output(layer, tgt), source, HookPoint::mlp_output(layer, src))?);
        }
    }
    for &(layer, head) in &c.heads {
        for &(src, tgt) in pairs {
            spec.extend(patch_from(
                HookPoint::head_output(layer, tgt, head),
                source,
                HookPoint::head_output(layer, src, head),
            )?);
        }
    }
    Ok(spec)
}

/// Patches early-MLP and idiomatic-head outputs from the `s_a` run into the
/// `s_l` run, against a seeded random control of matching size.
pub fn run_component_patch(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<ComparisonSummary> {
    inputs.check(cfg)?;
    let sets = inputs.head_sets("component-patch")?;
    let w = inputs.weights;
    let (nl, nh) = (w.config.num_layers, w.config.num_heads);
    let mut mlp_layers = cfg.early_mlp_layers.clone();
    mlp_layers.sort_unstable();
    mlp_layers.dedup();
    let experiment = Components { mlp_layers, heads: sets.idiomatic.clone() };
    let control = control_components(&experiment, nl, nh, &sets.idiomatic, derive_seed(cfg.seed, CONTROL_STREAM));

    let per_instance = try_map(inputs.instances, |inst| {
        let span_a = inst.span(Variant::Ambiguous)?;
        let span_l = inst.span(Variant::Literal)?;
        let pairs = aligned_span_positions(span_a, span_l);
        let source = forward(w, inst.tokens(Variant::Ambiguous), None, ForwardOptions::full())?;
        let base = forward(w, inst.tokens(Variant::Literal), None, ForwardOptions::sublayers())?;
        let s0 = scores(&base.logits, inst)?;
        [&experiment, &control]
            .into_iter()
            .map(|c| {
                let spec = component_spec(c, &source, &pairs)?;
                let start = spec.first_layer().unwrap_or(nl);
                let z = logits_from(w, &base, start, Some(&spec))?;
                Ok(delta_i(scores(&z, inst)?, s0))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let condition = |name: &str, i: usize| ConditionSamples {
        condition: name.into(),
        series: vec![
            (DELTA_F.into(), per_instance.iter().map(|d| d[i].df).collect()),
            (DELTA_L.into(), per_instance.iter().map(|d| d[i].dl).collect()),
        ],
    };
    let mut summary = summarize(
        &[condition("experiment", 0), condition("control", 1)],
        &[(0, 1)],
        cfg.resamples,
        cfg.level,
        derive_seed(cfg.seed, BOOTSTRAP_STREAM),
    )?;
    summary.details = json!({ "experiment": experiment, "control": control });
    Ok(summary)
}

/// Template-relative positions probed by kernel alignment.
const ALIGN_POSITIONS: [&str; 4] = ["last_idiom", "subsequent", "after_subsequent", "last"];

fn align_positions(inst: &IdiomInstance, variant: Variant) -> Result<[usize; 4]> {
    let (_, end) = inst.span(variant)?;
    let last = inst.last(variant);
    if end + 1 > last {
        return Err(Error::InvalidInput(format!(
            "instance {:?}: no token between the subsequent and the last position",
            inst.id
        )));
    }
    Ok([end - 1, end, end + 1, last])
}

/// Mutual-kNN alignment between residual states and external sentence
/// embeddings of each meaning, per layer and probed position.
pub fn run_kernel_align(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<SweepResult> {
    inputs.check(cfg)?;
    let emb = inputs
        .embeddings
        .ok_or_else(|| Error::Config("kernel-align requires an embeddings sidecar (--embeddings)".into()))?;
    let w = inputs.weights;
    let n = inputs.instances.len();
    if n <= cfg.k_neighbors {
        return Err(Error::Config(format!(
            "kernel alignment needs more instances ({n}) than neighbours ({})",
            cfg.k_neighbors
        )));
    }
    let meanings = [(Meaning::FigurativeMeaning, "figurative"), (Meaning::LiteralMeaning, "literal")];
    let mut external: Vec<Vec<&[f32]>> = vec![Vec::with_capacity(n); 2];
    for inst in inputs.instances {
        for (k, &(m, name)) in meanings.iter().enumerate() {
            external[k].push(emb.get(&inst.id, m).ok_or_else(|| {
                Error::InvalidInput(format!("no {name} embedding for instance {:?}", inst.id))
            })?);
        }
    }
    let layers: Vec<usize> = cfg.layer_range(&w.config)?.collect();
    // hidden[instance][layer index][position index]
    let hidden = try_map(inputs.instances, |inst| {
        let pos = align_positions(inst, cfg.variant)?;
        let rec = forward(w, inst.tokens(cfg.variant), None, ForwardOptions::sublayers())?;
        Ok(layers
            .iter()
            .map(|&l| pos.iter().map(|&p| rec.layers[l].resid_out.row(p).to_vec()).collect::<Vec<_>>())
            .collect::<Vec<_>>())
    })?;
    let mut cells = Vec::with_capacity(layers.len());
    for (li, &layer) in layers.iter().enumerate() {
        let mut series = Vec::new();
        for (pi, pname) in ALIGN_POSITIONS.iter().enumerate() {
            let states: Vec<&[f32]> = hidden.iter().map(|h| h[li][pi].as_slice()).collect();
            for (k, (_, mname)) in meanings.iter().enumerate() {
                let items = kernel_alignment_items(&states, &external[k], cfg.k_neighbors)?;
                series.push((format!("{pname}:{mname}"), items));
            }
        }
        cells.push(CellSamples { layer: Some(layer), head: None, series });
    }
    aggregate(SweepAxis::Layer, cells, &aggregate_options(cfg, None))
}

/// Seeded uniform cyclic permutation (Sattolo), so no element maps to itself.
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Config(format!("a derangement needs at least 2 instances, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}

pub const DELTA_F_B: &str = "delta_f_b";
pub const DELTA_L_B: &str = "delta_l_b";

/// Per-layer patch of the residual state at the `because` position.
///
/// Forward direction patches from `s_f`, `s_l` or another idiom's `s_a` into
/// `s_a`; the reverse direction patches `s_a` into the chosen paraphrase.
/// With another idiom as source, the `B`-idiom candidate sets are scored too.
pub fn run_because_patch(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<SweepResult> {
    inputs.check(cfg)?;
    let w = inputs.weights;
    let layers: Vec<usize> = cfg.layer_range(&w.config)?.collect();
    let n = inputs.instances.len();
    let partner = match cfg.source {
        PatchSource::OtherIdiom => derangement(n, derive_seed(cfg.seed, DERANGEMENT_STREAM))?,
        _ => (0..n).collect(),
    };
    let paraphrase = match cfg.source {
        PatchSource::Figurative => Variant::Figurative,
        PatchSource::Literal => Variant::Literal,
        PatchSource::OtherIdiom => Variant::Ambiguous,
    };
    let (target_variant, source_variant) = if cfg.reverse {
        (paraphrase, Variant::Ambiguous)
    } else {
        (Variant::Ambiguous, paraphrase)
    };
    let with_b = cfg.source == PatchSource::OtherIdiom;
    let idx: Vec<usize> = (0..n).collect();
    let per_instance = try_map(&idx, |&i| {
        let inst = &inputs.instances[i];
        let src_inst = &inputs.instances[partner[i]];
        let tpos = inst.subsequent(target_variant)?;
        let spos = src_inst.subsequent(source_variant)?;
        let base = forward(w, inst.tokens(target_variant), None, ForwardOptions::sublayers())?;
        let source = forward(w, src_inst.tokens(source_variant), None, ForwardOptions::sublayers())?;
        let s0 = scores(&base.logits, inst)?;
        let b0 = if with_b { Some(scores(&base.logits, src_inst)?) } else { None };
        layers
            .iter()
            .map(|&layer| {
                let spec = patch_from(HookPoint::residual(layer, tpos), &source, HookPoint::residual(layer, spos))?;
                let z = logits_from(w, &base, layer, Some(&spec))?;
                let mut v = vec![delta_i(scores(&z, inst)?, s0)];
                if let Some(b0) = b0 {
                    v.push(delta_i(scores(&z, src_inst)?, b0));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells = layers
        .iter()
        .enumerate()
        .map(|(li, &layer)| {
            let col = |k: usize, f: fn(&ScoreDelta) -> f64| per_instance.iter().map(|d| f(&d[li][k])).collect();
            let mut series: Vec<(String, Vec<f64>)> =
                vec![(DELTA_F.into(), col(0, |d| d.df)), (DELTA_L.into(), col(0, |d| d.dl))];
            if with_b {
                series.push((DELTA_F_B.into(), col(1, |d| d.df)));
                series.push((DELTA_L_B.into(), col(1, |d| d.dl)));
            }
            CellSamples { layer: Some(layer), head: None, series }
        })
        .collect();
    aggregate(SweepAxis::Layer, cells, &aggregate_options(cfg, Some((0, 1))))
}

/// Per-layer removal of every attention edge from the idiom span to the
/// subsequent or the last position, across all heads.
pub fn run_edge_knockout(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<SweepResult> {
    inputs.check(cfg)?;
    let w = inputs.weights;
    let layers: Vec<usize> = cfg.layer_range(&w.config)?.collect();
    let per_instance = try_map(inputs.instances, |inst| {
        let span = inst.span(cfg.variant)?;
        let query = match cfg.edge {
            EdgeTarget::Subsequent => span.1,
            EdgeTarget::Last => inst.last(cfg.variant),
        };
        let base = forward(w, inst.tokens(cfg.variant), None, ForwardOptions::sublayers())?;
        let s0 = scores(&base.logits, inst)?;
        layers
            .iter()
            .map(|&layer| {
                let mut spec = InterventionSpec::new();
                for key in span.0..span.1 {
                    spec.extend(mask_edges(EdgeMaskSpec {
                        layer,
                        query_position: query,
                        key_position: key,
                        heads: HeadSelection::All,
                    })?);
                }
                let z = logits_from(w, &base, layer, Some(&spec))?;
                Ok(delta_i(scores(&z, inst)?, s0))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells: Vec<_> = layers.iter().map(|&l| (Some(l), None)).collect();
    aggregate(SweepAxis::Layer, delta_cells(&cells, &per_instance), &aggregate_options(cfg, Some((0, 1))))
}

/// Cosine between span value vectors of `s_a` and a paraphrase (`s_l`
/// unless `variant` names `s_f`), averaged over each head set.
///
/// Instances whose paraphrase span length differs from the idiom span are
/// skipped and listed in the details.
pub fn run_head_divergence(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<ComparisonSummary> {
    inputs.check(cfg)?;
    let sets = inputs.head_sets("head-divergence")?;
    let w = inputs.weights;
    let other = match cfg.variant {
        Variant::Figurative => Variant::Figurative,
        _ => Variant::Literal,
    };
    let groups: [(&str, &[HeadId]); 3] =
        [("idiomatic", &sets.idiomatic), ("semantic", &sets.semantic), ("random", &sets.random)];
    let per_instance = try_map(inputs.instances, |inst| {
        let span_a = inst.span(Variant::Ambiguous)?;
        let span_o = inst.span(other)?;
        if span_a.1 - span_a.0 != span_o.1 - span_o.0 {
            return Ok(None);
        }
        let ra = forward(w, inst.tokens(Variant::Ambiguous), None, ForwardOptions::full())?;
        let ro = forward(w, inst.tokens(other), None, ForwardOptions::full())?;
        groups
            .iter()
            .map(|(_, heads)| {
                if heads.is_empty() {
                    return Err(Error::InvalidInput("head set is empty".into()));
                }
                let total = heads
                    .iter()
                    .map(|&(l, h)| head_value_cosine(&ra, span_a, &ro, span_o, l, h, cfg.query_row))
                    .sum::<Result<f64>>()?;
                Ok(total / heads.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    })?;
    let skipped: Vec<&str> = inputs
        .instances
        .iter()
        .zip(&per_instance)
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| i.id.as_str())
        .collect();
    let kept: Vec<&Vec<f64>> = per_instance.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no instance has equal idiom and {other} span lengths"
        )));
    }
    let conditions: Vec<ConditionSamples> = groups
        .iter()
        .enumerate()
        .map(|(g, (name, _))| ConditionSamples {
            condition: (*name).into(),
            series: vec![("cosine".into(), kept.iter().map(|v| v[g]).collect())],
        })
        .collect();
    let mut summary = summarize(&conditions, &[(0, 2), (1, 2)], cfg.resamples, cfg.level, derive_seed(cfg.seed, BOOTSTRAP_STREAM))?;
    summary.details = json!({ "compared_with": other.short_name(), "query_row": cfg.query_row, "skipped": skipped });
    Ok(summary)
}

/// Re-checks the three-inequality filter for every instance.
pub fn run_validate(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<ValidationReport> {
    inputs.check(cfg)?;
    let w = inputs.weights;
    let rows = try_map(inputs.instances, |inst| {
        let z = |v| forward(w, inst.tokens(v), None, ForwardOptions::logits_only()).map(|r| r.logits);
        let validation = validate_instance(
            &z(Variant::Ambiguous)?,
            &z(Variant::Figurative)?,
            &z(Variant::Literal)?,
            &inst.c_f,
            &inst.c_l,
        )?;
        Ok(RowReport { id: inst.id.clone(), validation })
    })?;
    Ok(ValidationReport::from_rows(rows))
}

pub fn run_build_dataset(
    weights: &Weights,
    tokenizer: &Tokenizer,
    rows: &[BuildRow],
    cfg: &ExperimentConfig,
    bos: Option<u32>,
) -> Result<ExperimentOutput> {
    cfg.validate(&weights.config)?;
    let outcome = build(weights, tokenizer, rows, &BuildOptions { candidates: cfg.candidates, bos })?;
    Ok(ExperimentOutput::Dataset {
        instances: outcome.instances,
        report: ValidationReport::from_rows(outcome.reports),
    })
}

/// Runs any experiment that works on a loaded dataset.
pub fn run(inputs: &Inputs<'_>, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    Ok(match cfg.experiment {
        Experiment::SublayerKnockout => ExperimentOutput::Sweep(run_sublayer_knockout(inputs, cfg)?),
        Experiment::HeadScan => {
            let (sweep, heads) = run_head_scan(inputs, cfg)?;
            ExperimentOutput::HeadScan { sweep, heads }
        }
        Experiment::ComponentPatch => ExperimentOutput::Summary(run_component_patch(inputs, cfg)?),
        Experiment::KernelAlign => ExperimentOutput::Sweep(run_kernel_align(inputs, cfg)?),
        Experiment::BecausePatch => ExperimentOutput::Sweep(run_because_patch(inputs, cfg)?),
        Experiment::EdgeKnockout => ExperimentOutput::Sweep(run_edge_knockout(inputs, cfg)?),
        Experiment::HeadDivergence => ExperimentOutput::Summary(run_head_divergence(inputs, cfg)?),
        Experiment::Validate => ExperimentOutput::Validation(run_validate(inputs, cfg)?),
        Experiment::BuildDataset => {
            return Err(Error::Config(
                "build-dataset reads a phrase CSV and a tokenizer; use run_build_dataset".into(),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derangement_has_no_fixed_points() {
        for seed in 0..20 {
            let p = derangement(7, seed).unwrap();
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = p.clone();
            s.sort_unstable();
            assert_eq!(s, (0..7).collect::<Vec<_>>());
        }
        assert!(derangement(1, 0).is_err());
    }

    #[test]
    fn span_alignment_counts_from_the_end() {
        assert_eq!(aligned_span_positions((2, 5), (2, 4)), vec![(4, 3), (3, 2)]);
    }

    #[test]
    fn control_matches_counts() {
        let exp = Components { mlp_layers: vec![0, 1], heads: vec![(0, 0), (1, 1)] };
        let c = control_components(&exp, 4, 2, &exp.heads, 5);
        assert_eq!(c.mlp_layers.len(), 2);
        assert!(c.mlp_layers.iter().all(|l| *l >= 2));
        assert_eq!(c.heads, vec![(0, 1), (1, 0)]);
    }
}
