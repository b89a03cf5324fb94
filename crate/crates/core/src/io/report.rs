// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sweep tables as CSV, JSON or SVG.
//!
//! CSV is long format, one row per `(cell, metric)`:
//! `layer,head,metric,mean,ci_lo,ci_hi,significant,n,p_value`, with empty
//! fields for an absent layer, head or p-value. Numbers are written in the
//! shortest form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricStat, SweepAxis, SweepCell, SweepResult};

pub const CSV_HEADER: [&str; 9] = ["layer", "head", "metric", "mean", "ci_lo", "ci_hi", "significant", "n", "p_value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::Svg => "svg",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::InvalidInput(format!("unknown output format {other:?}"))),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_to_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for c in &result.cells {
        for m in &c.metrics {
            w.write_record([
                opt(c.layer),
                opt(c.head),
                m.metric.clone(),
                m.mean.to_string(),
                m.ci_lo.to_string(),
                m.ci_hi.to_string(),
                c.significant.to_string(),
                c.n.to_string(),
                opt(c.p_value),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Inverse of [`sweep_to_csv`]. Consecutive rows with the same
/// `(layer, head)` form one cell.
pub fn sweep_from_csv(text: &str) -> Result<SweepResult> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::validation("csv:1", format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut cells: Vec<SweepCell> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let loc = format!("csv:{}", i + 2);
        let bad = |field: &str| Error::validation(&loc, format!("bad {field} field"));
        let num = |idx: usize, field: &str| rec[idx].parse::<f64>().map_err(|_| bad(field));
        let idx = |idx: usize, field: &str| -> Result<Option<usize>> {
            match &rec[idx] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(field)),
            }
        };
        let layer = idx(0, "layer")?;
        let head = idx(1, "head")?;
        let stat = MetricStat {
            metric: rec[2].to_owned(),
            mean: num(3, "mean")?,
            ci_lo: num(4, "ci_lo")?,
            ci_hi: num(5, "ci_hi")?,
        };
        let significant = rec[6].parse::<bool>().map_err(|_| bad("significant"))?;
        let n = rec[7].parse::<usize>().map_err(|_| bad("n"))?;
        let p_value = match &rec[8] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad("p_value"))?),
        };
        match cells.last_mut() {
            Some(c) if c.layer == layer && c.head == head => c.metrics.push(stat),
            _ => cells.push(SweepCell {
                layer,
                head,
                n,
                metrics: vec![stat],
                significant,
                p_value,
            }),
        }
    }
    let has_layer = cells.iter().any(|c| c.layer.is_some());
    let has_head = cells.iter().any(|c| c.head.is_some());
    let axis = match (has_layer, has_head) {
        (true, true) => SweepAxis::LayerHead,
        (false, true) => SweepAxis::Head,
        _ => SweepAxis::Layer,
    };
    Ok(SweepResult { axis, cells })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One line per metric across cells, with CI whiskers, a dashed zero line
/// and a `*` above significant cells.
pub fn sweep_to_svg(result: &SweepResult, title: &str) -> String {
    let (w, h) = (720.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let names = result.metric_names();
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for c in &result.cells {
        for m in &c.metrics {
            lo = lo.min(m.ci_lo);
            hi = hi.max(m.ci_hi);
        }
    }
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let n = result.cells.len().max(1);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let x = |i: usize| {
        if n == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="zero" x1="{left}" y1="{y0:.2}" x2="{}" y2="{y0:.2}" stroke="gray" stroke-dasharray="5 4"/>"#,
        left + plot_w,
        y0 = y(0.0)
    );
    for v in [lo + pad, 0.0, hi - pad] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{v:.3}</text>"#,
            left - 6.0,
            y(v)
        );
    }
    let label_every = n.div_ceil(24).max(1);
    for (i, c) in result.cells.iter().enumerate() {
        if i % label_every == 0 {
            let label = match (c.layer, c.head) {
                (Some(l), Some(hd)) => format!("{l}.{hd}"),
                (Some(l), None) => l.to_string(),
                (None, Some(hd)) => hd.to_string(),
                (None, None) => i.to_string(),
            };
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{label}</text>"#, x(i), top + plot_h + 18.0);
        }
        if c.significant {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">*</text>"#, x(i), top + 14.0);
        }
    }
    let axis_label = match result.axis {
        SweepAxis::Layer => "layer",
        SweepAxis::Head => "head",
        SweepAxis::LayerHead => "layer.head",
    };
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{axis_label}</text>"#, left + plot_w / 2.0, h - 12.0);
    for (k, name) in names.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut points = Vec::new();
        for (i, c) in result.cells.iter().enumerate() {
            if let Some(m) = c.metric(name) {
                points.push(format!("{:.2},{:.2}", x(i), y(m.mean)));
                let _ = writeln!(
                    s,
                    r#"<line x1="{xi:.2}" y1="{:.2}" x2="{xi:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.4"/>"#,
                    y(m.ci_lo),
                    y(m.ci_hi),
                    xi = x(i)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-metric="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(name),
            points.join(" ")
        );
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" dominant-baseline="middle">{}</text>"#, lx + 24.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_sweep(result: &SweepResult, format: OutputFormat, title: &str) -> Result<String> {
    match format {
        OutputFormat::Csv => sweep_to_csv(result),
        OutputFormat::Json => Ok(result.to_json()? + "\n"),
        OutputFormat::Svg => Ok(sweep_to_svg(result, title)),
    }
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sweep(result: &SweepResult, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let path = path.as_ref();
    let title = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    write_text(path, &render_sweep(result, format, title)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SweepResult {
        let cell = |layer, f: f64, p| SweepCell {
            layer: Some(layer),
            head: None,
            n: 3,
            metrics: vec![
                MetricStat { metric: "delta_f".into(), mean: f, ci_lo: f - 0.1, ci_hi: f + 0.1 },
                MetricStat { metric: "delta_l".into(), mean: -f, ci_lo: -f - 0.2, ci_hi: -f + 1.0 / 3.0 },
            ],
            significant: layer == 0,
            p_value: p,
        };
        SweepResult {
            axis: SweepAxis::Layer,
            cells: vec![cell(0, -0.123456789012345678, Some(0.001)), cell(1, 1e-300, None)],
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let csv = sweep_to_csv(&SweepResult::empty(SweepAxis::Layer)).unwrap();
        assert_eq!(csv, "layer,head,metric,mean,ci_lo,ci_hi,significant,n,p_value\n");
        assert!(sweep_from_csv(&csv).unwrap().cells.is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = sample();
        let csv = sweep_to_csv(&r).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(sweep_from_csv(&csv).unwrap(), r);
    }

    #[test]
    fn svg_has_series_and_zero_line() {
        let svg = sweep_to_svg(&sample(), "t<1>");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"class="zero""#));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("t&lt;1&gt;"));
    }

    #[test]
    fn bad_field_names_its_row() {
        let csv = "layer,head,metric,mean,ci_lo,ci_hi,significant,n,p_value\n0,,f,x,0,0,true,1,\n";
        let err = sweep_from_csv(csv).unwrap_err().to_string();
        assert!(err.contains("csv:2") && err.contains("mean"), "{err}");
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_sweep(&sample(), "/nonexistent-dir/x.csv", OutputFormat::Csv).unwrap_err();
        assert!(err.is_io());
    }
}
