// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Variant;
use crate::error::{Error, Result};
use crate::interventions::KnockoutMode;
use crate::metrics::{QueryRow, DEFAULT_HEAD_SET_SIZE, DEFAULT_K};
use crate::metrics::sweep::{DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SublayerKnockout,
    HeadScan,
    ComponentPatch,
    KernelAlign,
    BecausePatch,
    EdgeKnockout,
    HeadDivergence,
    BuildDataset,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Self::SublayerKnockout,
        Self::HeadScan,
        Self::ComponentPatch,
        Self::KernelAlign,
        Self::BecausePatch,
        Self::EdgeKnockout,
        Self::HeadDivergence,
        Self::BuildDataset,
        Self::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SublayerKnockout => "sublayer-knockout",
            Self::HeadScan => "head-scan",
            Self::ComponentPatch => "component-patch",
            Self::KernelAlign => "kernel-align",
            Self::BecausePatch => "because-patch",
            Self::EdgeKnockout => "edge-knockout",
            Self::HeadDivergence => "head-divergence",
            Self::BuildDataset => "build-dataset",
            Self::Validate => "validate",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Which sublayer a knockout sweep removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sublayer {
    #[default]
    Mlp,
    Attn,
}

impl FromStr for Sublayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Self::Mlp),
            "attn" | "mhsa" | "attention" => Ok(Self::Attn),
            other => Err(Error::Config(format!("unknown sublayer {other:?}"))),
        }
    }
}

/// Where the residual state patched into the `because` position comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchSource {
    #[default]
    Figurative,
    Literal,
    /// `s_a` of a different idiom, paired by a seeded derangement.
    OtherIdiom,
}

impl FromStr for PatchSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sf" | "s_f" | "figurative" => Ok(Self::Figurative),
            "sl" | "s_l" | "literal" => Ok(Self::Literal),
            "sa*" | "sa-star" | "s_a*" | "other-idiom" => Ok(Self::OtherIdiom),
            other => Err(Error::Config(format!("unknown patch source {other:?}"))),
        }
    }
}

/// Query position whose edges from the idiom span are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTarget {
    #[default]
    Subsequent,
    Last,
}

impl FromStr for EdgeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subsequent" | "idiom-subsequent" => Ok(Self::Subsequent),
            "last" | "idiom-last" => Ok(Self::Last),
            other => Err(Error::Config(format!("unknown edge target {other:?}"))),
        }
    }
}

/// Half-open layer range, written `a..b` or `a..=b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn range(self) -> Range<usize> {
        self.start..self.end
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer range {s:?}; expected a..b, a..=b or a single layer"));
        let num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
        let (start, end) = if let Some((a, b)) = s.split_once("..=") {
            (num(a)?, num(b)? + 1)
        } else if let Some((a, b)) = s.split_once("..") {
            (num(a)?, num(b)?)
        } else {
            let l = num(s)?;
            (l, l + 1)
        };
        if start >= end {
            return Err(bad());
        }
        Ok(Self { start, end })
    }
}

/// Every knob of an experiment run. Serialized into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Sentence the intervention runs on.
    pub variant: Variant,
    pub mode: KnockoutMode,
    pub target: Sublayer,
    pub source: PatchSource,
    /// Patch the idiom's `because` state into the paraphrase instead.
    pub reverse: bool,
    pub edge: EdgeTarget,
    /// Layers swept; all layers when unset.
    pub layers: Option<LayerRange>,
    pub k_neighbors: usize,
    pub top_k: usize,
    /// MLP layers patched by component patching.
    pub early_mlp_layers: Vec<usize>,
    pub query_row: QueryRow,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Candidate set size for dataset building.
    pub candidates: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::new(Experiment::SublayerKnockout)
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            variant: Variant::Ambiguous,
            mode: KnockoutMode::Mean,
            target: Sublayer::Mlp,
            source: PatchSource::Figurative,
            reverse: false,
            edge: EdgeTarget::Subsequent,
            layers: None,
            k_neighbors: DEFAULT_K,
            top_k: DEFAULT_HEAD_SET_SIZE,
            early_mlp_layers: vec![0, 1, 2],
            query_row: QueryRow::Subsequent,
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
            candidates: crate::dataset::CANDIDATE_SET_SIZE,
        }
    }

    /// Swept layers, checked against the model.
    pub fn layer_range(&self, model: &ModelConfig) -> Result<Range<usize>> {
        match self.layers {
            None => Ok(0..model.num_layers),
            Some(r) if r.end <= model.num_layers => Ok(r.range()),
            Some(r) => Err(Error::Config(format!(
                "layer range {}..{} exceeds the model's {} layers",
                r.start, r.end, model.num_layers
            ))),
        }
    }

    /// Checks selectors against the chosen experiment and the model.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.layer_range(model)?;
        if self.resamples == 0 {
            return Err(Error::Config("resamples must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} not in (0, 1)", self.level)));
        }
        match self.experiment {
            Experiment::HeadScan if 3 * self.top_k > model.total_heads() || self.top_k == 0 => {
                Err(Error::Config(format!(
                    "head-set size {} needs 1 <= 3k <= {} heads",
                    self.top_k,
                    model.total_heads()
                )))
            }
            Experiment::ComponentPatch => {
                if let Some(l) = self.early_mlp_layers.iter().find(|&&l| l >= model.num_layers) {
                    return Err(Error::Config(format!("early MLP layer {l} out of range")));
                }
                Ok(())
            }
            Experiment::KernelAlign if self.k_neighbors == 0 => {
                Err(Error::Config("k-neighbors must be at least 1".into()))
            }
            Experiment::BecausePatch if self.reverse && self.source == PatchSource::OtherIdiom => Err(
                Error::Config("the reverse direction needs a paraphrase source (sf or sl)".into()),
            ),
            Experiment::BecausePatch if self.variant != Variant::Ambiguous => Err(Error::Config(
                "because-patch always targets s_a (use --reverse for paraphrase targets)".into(),
            )),
            Experiment::BuildDataset if self.candidates == 0 => {
                Err(Error::Config("candidate set size must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_ranges() {
        assert_eq!("2..5".parse::<LayerRange>().unwrap().range(), 2..5);
        assert_eq!("2..=5".parse::<LayerRange>().unwrap().range(), 2..6);
        assert_eq!("3".parse::<LayerRange>().unwrap().range(), 3..4);
        assert!("5..2".parse::<LayerRange>().is_err());
        assert!("a..b".parse::<LayerRange>().is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{e}\""));
        }
    }

    #[test]
    fn head_scan_k_is_checked() {
        let model = ModelConfig::tiny(2, 8, 2, 1, 16, 48);
        let mut cfg = ExperimentConfig::new(Experiment::HeadScan);
        cfg.top_k = 1;
        cfg.validate(&model).unwrap();
        cfg.top_k = 2;
        assert!(matches!(cfg.validate(&model), Err(Error::Config(_))));
    }
}
