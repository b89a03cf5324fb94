// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cosine between attention-weighted span value vectors of one head in two
//! contexts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActivationRecord;

/// Which query row supplies the attention weights over the span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRow {
    /// The token right after the span.
    #[default]
    Subsequent,
    /// The final token of the sentence.
    Last,
}

impl std::str::FromStr for QueryRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subsequent" => Ok(Self::Subsequent),
            "last" => Ok(Self::Last),
            other => Err(Error::InvalidInput(format!("unknown query row {other:?}"))),
        }
    }
}

/// `(1/|I|) Σ_{i∈I} α_{q,i} V_i` for head `head` of `layer`.
pub fn span_value_vector(
    record: &ActivationRecord,
    span: (usize, usize),
    layer: usize,
    head: usize,
    row: QueryRow,
) -> Result<Vec<f64>> {
    let lr = record.layers.get(layer).ok_or_else(|| {
        Error::InvalidInput(format!("record has no layer {layer}"))
    })?;
    let attn = lr.attention.get(head).ok_or_else(|| {
        Error::InvalidInput(format!("record has no attention for head {head} (captured fully?)"))
    })?;
    if lr.values.is_empty() {
        return Err(Error::InvalidInput("record has no value vectors".into()));
    }
    let kv = head / (lr.attention.len() / lr.values.len());
    let values = &lr.values[kv];
    let (start, end) = span;
    let t = record.seq_len();
    if start >= end || end > t {
        return Err(Error::InvalidInput(format!("span [{start}, {end}) outside sequence of {t}")));
    }
    let q = match row {
        QueryRow::Subsequent => end,
        QueryRow::Last => t - 1,
    };
    if q >= t {
        return Err(Error::InvalidInput("span leaves no subsequent token".into()));
    }
    let mut out = vec![0.0f64; values.cols()];
    for i in start..end {
        let w = f64::from(attn.get(q, i));
        for (o, &v) in out.iter_mut().zip(values.row(i)) {
            *o += w * f64::from(v);
        }
    }
    let len = (end - start) as f64;
    out.iter_mut().for_each(|o| *o /= len);
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine undefined for a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the span value vectors of `head` in two runs whose spans
/// have equal length.
pub fn head_value_cosine(
    record_a: &ActivationRecord,
    span_a: (usize, usize),
    record_b: &ActivationRecord,
    span_b: (usize, usize),
    layer: usize,
    head: usize,
    row: QueryRow,
) -> Result<f64> {
    if span_a.1 - span_a.0 != span_b.1 - span_b.0 {
        return Err(Error::InvalidInput(format!(
            "span lengths differ: {} vs {}",
            span_a.1 - span_a.0,
            span_b.1 - span_b.0
        )));
    }
    let va = span_value_vector(record_a, span_a, layer, head, row)?;
    let vb = span_value_vector(record_b, span_b, layer, head, row)?;
    cosine(&va, &vb)
}
