// SPDX-License-Identifier: MIT OR Apache-2.0

//! Selection of idiomatic, semantic and random attention-head sets from
//! per-head knockout effects.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default size of every head set.
pub const DEFAULT_HEAD_SET_SIZE: usize = 20;

/// `(layer, head)`.
pub type HeadId = (usize, usize);

/// Mean knockout effect of one head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadEffect {
    pub layer: usize,
    pub head: usize,
    pub delta_f: f64,
    pub delta_l: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSets {
    /// Knockout lowers `F` and raises `L`, best first.
    pub idiomatic: Vec<HeadId>,
    /// Knockout raises `F` and lowers `L`, best first.
    pub semantic: Vec<HeadId>,
    /// Uniform draw from the remaining heads, sorted.
    pub random: Vec<HeadId>,
}

impl HeadSets {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::validation(path.display().to_string(), e.to_string()))
    }

    /// Checks coordinates against a model shape and pairwise disjointness.
    pub fn validate(&self, num_layers: usize, num_heads: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, set) in [("idiomatic", &self.idiomatic), ("semantic", &self.semantic), ("random", &self.random)] {
            for &(l, h) in set {
                if l >= num_layers || h >= num_heads {
                    return Err(Error::InvalidInput(format!("{name} head ({l}, {h}) out of range")));
                }
                if !seen.insert((l, h)) {
                    return Err(Error::InvalidInput(format!("head ({l}, {h}) appears twice in the head sets")));
                }
            }
        }
        Ok(())
    }
}

/// Ordinal rank of every index under `cmp`; equal keys are ordered by
/// `(layer, head)`.
fn ranks(effects: &[HeadEffect], key: impl Fn(&HeadEffect) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..effects.len()).collect();
    order.sort_by(|&a, &b| {
        key(&effects[a])
            .total_cmp(&key(&effects[b]))
            .then((effects[a].layer, effects[a].head).cmp(&(effects[b].layer, effects[b].head)))
    });
    let mut rank = vec![0; effects.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// `k` heads with the smallest rank sum among `pool`, where `sign = 1`
/// ranks by `ΔF` ascending and `ΔL` descending and `sign = -1` flips both.
fn select(effects: &[HeadEffect], pool: &[usize], k: usize, sign: f64) -> Vec<HeadId> {
    let sub: Vec<HeadEffect> = pool.iter().map(|&i| effects[i]).collect();
    let rf = ranks(&sub, |e| sign * e.delta_f);
    let rl = ranks(&sub, |e| -sign * e.delta_l);
    let mut order: Vec<usize> = (0..sub.len()).collect();
    order.sort_by(|&a, &b| {
        (rf[a] + rl[a])
            .cmp(&(rf[b] + rl[b]))
            .then_with(|| (sign * sub[a].delta_f).total_cmp(&(sign * sub[b].delta_f)))
            .then((sub[a].layer, sub[a].head).cmp(&(sub[b].layer, sub[b].head)))
    });
    order.into_iter().take(k).map(|i| (sub[i].layer, sub[i].head)).collect()
}

/// Idiomatic heads are the `k` best by combined rank of `-ΔF` and `+ΔL`;
/// semantic heads the `k` best of the rest with both signs flipped; random
/// heads a seeded uniform draw from what remains.
pub fn rank_heads(effects: &[HeadEffect], k: usize, seed: u64) -> Result<HeadSets> {
    if k == 0 {
        return Err(Error::Config("head set size must be at least 1".into()));
    }
    if 3 * k > effects.len() {
        return Err(Error::Config(format!(
            "three disjoint head sets of {k} need {} heads, model has {}",
            3 * k,
            effects.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for e in effects {
        if !e.delta_f.is_finite() || !e.delta_l.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite effect for head ({}, {})", e.layer, e.head)));
        }
        if !ids.insert((e.layer, e.head)) {
            return Err(Error::InvalidInput(format!("head ({}, {}) listed twice", e.layer, e.head)));
        }
    }
    let all: Vec<usize> = (0..effects.len()).collect();
    let idiomatic = select(effects, &all, k, 1.0);
    let rest: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| !idiomatic.contains(&(effects[i].layer, effects[i].head)))
        .collect();
    let semantic = select(effects, &rest, k, -1.0);
    let mut remaining: Vec<HeadId> = rest
        .iter()
        .map(|&i| (effects[i].layer, effects[i].head))
        .filter(|id| !semantic.contains(id))
        .collect();
    remaining.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random: Vec<HeadId> = rand::seq::index::sample(&mut rng, remaining.len(), k)
        .into_iter()
        .map(|i| remaining[i])
        .collect();
    random.sort_unstable();
    Ok(HeadSets {
        idiomatic,
        semantic,
        random,
    })
}

/// Compare helper for callers sorting heads by effect.
pub fn by_delta_f(a: &HeadEffect, b: &HeadEffect) -> Ordering {
    a.delta_f.total_cmp(&b.delta_f).then((a.layer, a.head).cmp(&(b.layer, b.head)))
}
