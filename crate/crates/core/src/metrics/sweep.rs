// SPDX-License-Identifier: MIT OR Apache-2.0

//! Aggregation of per-instance effects into sweep tables.

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_ci, mean, paired_t_test};
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_ALPHA: f64 = 0.05;

pub const DELTA_F: &str = "delta_f";
pub const DELTA_L: &str = "delta_l";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Layer,
    Head,
    LayerHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub metric: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub n: usize,
    pub metrics: Vec<MetricStat>,
    pub significant: bool,
    /// Paired-t p-value of the first metric pair, when defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

impl SweepCell {
    pub fn metric(&self, name: &str) -> Option<&MetricStat> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn empty(axis: SweepAxis) -> Self {
        Self { axis, cells: Vec::new() }
    }

    /// Metric names in first-appearance order.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.cells {
            for m in &c.metrics {
                if !names.contains(&m.metric) {
                    names.push(m.metric.clone());
                }
            }
        }
        names
    }

    /// Checks `ci_lo <= mean <= ci_hi` and `n >= 1` for every cell.
    pub fn check(&self) -> Result<()> {
        for c in &self.cells {
            if c.n == 0 {
                return Err(Error::InvalidInput(format!("cell {:?}/{:?} has n = 0", c.layer, c.head)));
            }
            for m in &c.metrics {
                if !(m.ci_lo <= m.mean && m.mean <= m.ci_hi) {
                    return Err(Error::InvalidInput(format!(
                        "cell {:?}/{:?} metric {}: interval [{}, {}] excludes mean {}",
                        c.layer, c.head, m.metric, m.ci_lo, m.ci_hi, m.mean
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-instance samples of every metric for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSamples {
    pub layer: Option<usize>,
    pub head: Option<usize>,
    /// `(metric, values)`; all series have the same length.
    pub series: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub resamples: usize,
    pub level: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Indices into `series` of the pair compared for significance.
    pub compare: Option<(usize, usize)>,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            compare: Some((0, 1)),
        }
    }
}

/// SplitMix64 mix of `seed` and `stream`, for independent per-cell RNGs.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bootstrap CIs per metric, paired-t per cell, and the significance flag.
///
/// A cell is flagged when the compared pair differs at `alpha` and its gap
/// `|mean_a - mean_b|` exceeds the average gap across all cells. Cells with
/// a single instance get a degenerate interval and no test.
pub fn aggregate(axis: SweepAxis, cells: Vec<CellSamples>, opts: &AggregateOptions) -> Result<SweepResult> {
    struct Partial {
        cell: SweepCell,
        gap: Option<f64>,
    }
    let mut partial = Vec::with_capacity(cells.len());
    for (ci, samples) in cells.into_iter().enumerate() {
        let n = samples.series.first().map_or(0, |s| s.1.len());
        if n == 0 {
            return Err(Error::InvalidInput(format!(
                "cell {:?}/{:?} has no samples",
                samples.layer, samples.head
            )));
        }
        if let Some((name, v)) = samples.series.iter().find(|s| s.1.len() != n) {
            return Err(Error::InvalidInput(format!(
                "metric {name} has {} samples, expected {n}",
                v.len()
            )));
        }
        let mut metrics = Vec::with_capacity(samples.series.len());
        for (mi, (name, values)) in samples.series.iter().enumerate() {
            let stat = if n == 1 {
                MetricStat { metric: name.clone(), mean: values[0], ci_lo: values[0], ci_hi: values[0] }
            } else {
                let seed = derive_seed(opts.seed, (ci as u64) << 16 | mi as u64);
                let ci = bootstrap_ci(values, opts.resamples, opts.level, seed)?;
                MetricStat { metric: name.clone(), mean: ci.mean, ci_lo: ci.lo, ci_hi: ci.hi }
            };
            metrics.push(stat);
        }
        let (mut p_value, mut gap) = (None, None);
        if let Some((a, b)) = opts.compare {
            let (sa, sb) = match (samples.series.get(a), samples.series.get(b)) {
                (Some(x), Some(y)) => (&x.1, &y.1),
                _ => return Err(Error::InvalidInput("comparison pair outside metric list".into())),
            };
            gap = Some((mean(sa) - mean(sb)).abs());
            p_value = match paired_t_test(sa, sb) {
                Ok(t) => Some(t.p),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
        }
        partial.push(Partial {
            cell: SweepCell {
                layer: samples.layer,
                head: samples.head,
                n,
                metrics,
                significant: false,
                p_value,
            },
            gap,
        });
    }
    let gaps: Vec<f64> = partial.iter().filter_map(|p| p.gap).collect();
    let avg_gap = if gaps.is_empty() { f64::INFINITY } else { mean(&gaps) };
    let cells = partial
        .into_iter()
        .map(|mut p| {
            p.cell.significant = matches!((p.cell.p_value, p.gap), (Some(pv), Some(g)) if pv < opts.alpha && g > avg_gap);
            p.cell
        })
        .collect();
    Ok(SweepResult { axis, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(layer: usize, f: Vec<f64>, l: Vec<f64>) -> CellSamples {
        CellSamples {
            layer: Some(layer),
            head: None,
            series: vec![(DELTA_F.into(), f), (DELTA_L.into(), l)],
        }
    }

    #[test]
    fn aggregates_and_flags() {
        let cells = vec![
            cell(0, vec![-0.5, -0.4, -0.6, -0.45], vec![0.3, 0.35, 0.4, 0.2]),
            cell(1, vec![0.01, -0.02, 0.0, 0.01], vec![0.0, 0.01, -0.01, 0.02]),
        ];
        let r = aggregate(SweepAxis::Layer, cells, &AggregateOptions::default()).unwrap();
        r.check().unwrap();
        assert!(r.cells[0].significant);
        assert!(!r.cells[1].significant);
        assert_eq!(r.cells[0].n, 4);
        assert_eq!(r.metric_names(), vec![DELTA_F, DELTA_L]);
    }

    #[test]
    fn single_instance_is_degenerate() {
        let r = aggregate(SweepAxis::Layer, vec![cell(0, vec![0.2], vec![0.1])], &AggregateOptions::default()).unwrap();
        let m = &r.cells[0].metrics[0];
        assert_eq!((m.mean, m.ci_lo, m.ci_hi), (0.2, 0.2, 0.2));
        assert_eq!(r.cells[0].p_value, None);
        assert!(!r.cells[0].significant);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
