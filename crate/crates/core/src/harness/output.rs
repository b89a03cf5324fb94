// SPDX-License-Identifier: MIT OR Apache-2.0

//! Result types that are not layer or head sweeps, and writing of every
//! experiment output to disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{dataset_to_jsonl, IdiomInstance};
use crate::dataset_builder::RowReport;
use crate::error::{Error, Result};
use crate::io::report::{render_sweep, write_text, OutputFormat};
use crate::metrics::stats::{bootstrap_ci, mean, paired_t_test, std_dev};
use crate::metrics::{HeadSets, SweepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub n: usize,
    pub metrics: Vec<SummaryStat>,
}

/// Paired t-test of one metric between two conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub mean_difference: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub conditions: Vec<ConditionSummary>,
    pub comparisons: Vec<Comparison>,
    /// Experiment-specific details (components patched, skipped rows, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

/// Per-instance values of every metric under one condition.
pub(crate) struct ConditionSamples {
    pub condition: String,
    pub series: Vec<(String, Vec<f64>)>,
}

pub(crate) fn summarize(
    conditions: &[ConditionSamples],
    compare: &[(usize, usize)],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ComparisonSummary> {
    let mut out = Vec::with_capacity(conditions.len());
    for (ci, c) in conditions.iter().enumerate() {
        let n = c.series.first().map_or(0, |s| s.1.len());
        let mut metrics = Vec::new();
        for (mi, (name, values)) in c.series.iter().enumerate() {
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("condition {} has no samples", c.condition)));
            }
            let m = mean(values);
            let (ci_lo, ci_hi) = if values.len() < 2 {
                (m, m)
            } else {
                let s = crate::metrics::derive_seed(seed, (ci as u64) << 16 | mi as u64);
                let ci = bootstrap_ci(values, resamples, level, s)?;
                (ci.lo, ci.hi)
            };
            metrics.push(SummaryStat { metric: name.clone(), mean: m, sd: std_dev(values), ci_lo, ci_hi });
        }
        out.push(ConditionSummary { condition: c.condition.clone(), n, metrics });
    }
    let mut comparisons = Vec::new();
    for &(a, b) in compare {
        let (ca, cb) = (&conditions[a], &conditions[b]);
        for ((name, va), (_, vb)) in ca.series.iter().zip(&cb.series) {
            let diffs: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
            let test = match paired_t_test(va, vb) {
                Ok(t) => Some(t),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            comparisons.push(Comparison {
                metric: name.clone(),
                a: ca.condition.clone(),
                b: cb.condition.clone(),
                mean_difference: mean(&diffs),
                t: test.map(|t| t.t),
                p_value: test.map(|t| t.p),
            });
        }
    }
    Ok(ComparisonSummary { conditions: out, comparisons, details: serde_json::Value::Null })
}

impl ComparisonSummary {
    /// Long-format table: one row per condition metric, then one row per
    /// comparison with `condition = "<a> vs <b>"`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "metric", "n", "mean", "sd", "ci_lo", "ci_hi", "t", "p_value"])?;
        for c in &self.conditions {
            for m in &c.metrics {
                w.write_record([
                    c.condition.clone(),
                    m.metric.clone(),
                    c.n.to_string(),
                    m.mean.to_string(),
                    m.sd.to_string(),
                    m.ci_lo.to_string(),
                    m.ci_hi.to_string(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        for cmp in &self.comparisons {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                format!("{} vs {}", cmp.a, cmp.b),
                cmp.metric.clone(),
                String::new(),
                cmp.mean_difference.to_string(),
                String::new(),
                String::new(),
                String::new(),
                opt(cmp.t),
                opt(cmp.p_value),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub passed: usize,
    pub rows: Vec<RowReport>,
}

impl ValidationReport {
    pub fn from_rows(rows: Vec<RowReport>) -> Self {
        Self {
            total: rows.len(),
            passed: rows.iter().filter(|r| r.validation.passed).count(),
            rows,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id", "passed", "ambiguous_figurative", "figurative_figurative", "literal_literal",
            "f_sa", "l_sa", "f_sf", "l_sf", "f_sl", "l_sl",
        ])?;
        for r in &self.rows {
            let v = &r.validation;
            let mut rec = vec![
                r.id.clone(),
                v.passed.to_string(),
                v.ambiguous_figurative.to_string(),
                v.figurative_figurative.to_string(),
                v.literal_literal.to_string(),
            ];
            for s in &v.scores {
                rec.push(s.f.to_string());
                rec.push(s.l.to_string());
            }
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutput {
    Sweep(SweepResult),
    HeadScan { sweep: SweepResult, heads: HeadSets },
    Summary(ComparisonSummary),
    Validation(ValidationReport),
    Dataset { instances: Vec<IdiomInstance>, report: ValidationReport },
}

/// `out` with `suffix` appended to its file stem, e.g. `x.csv` → `x.heads.json`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn unsupported(what: &str, format: OutputFormat) -> Error {
    Error::Config(format!("{what} output cannot be written as {}", format.extension()))
}

impl ExperimentOutput {
    /// Writes the primary output to `out` and any companions next to it.
    /// Returns every path written, primary first.
    pub fn write(&self, out: &Path, format: OutputFormat, title: &str) -> Result<Vec<PathBuf>> {
        let mut written = vec![out.to_path_buf()];
        match self {
            Self::Sweep(s) => write_text(out, &render_sweep(s, format, title)?)?,
            Self::HeadScan { sweep, heads } => {
                write_text(out, &render_sweep(sweep, format, title)?)?;
                let path = sibling(out, "heads.json");
                write_text(&path, &(heads.to_json()? + "\n"))?;
                written.push(path);
            }
            Self::Summary(s) => {
                let text = match format {
                    OutputFormat::Csv => s.to_csv()?,
                    OutputFormat::Json => serde_json::to_string_pretty(s)? + "\n",
                    OutputFormat::Svg => return Err(unsupported("summary", format)),
                };
                write_text(out, &text)?;
            }
            Self::Validation(r) => {
                let text = match format {
                    OutputFormat::Csv => r.to_csv()?,
                    OutputFormat::Json => serde_json::to_string_pretty(r)? + "\n",
                    OutputFormat::Svg => return Err(unsupported("validation", format)),
                };
                write_text(out, &text)?;
            }
            Self::Dataset { instances, report } => {
                write_text(out, &dataset_to_jsonl(instances)?)?;
                let path = sibling(out, "report.json");
                write_text(&path, &(serde_json::to_string_pretty(report)? + "\n"))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}
