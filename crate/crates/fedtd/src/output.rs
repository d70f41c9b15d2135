//! Trace CSV and SVG chart emission.

use std::fmt::Write as _;
use std::io::Write;

use fedtd_core::engine::RunTrace;

use crate::error::HarnessError;

pub const TRACE_HEADER: [&str; 6] = [
    "round",
    "err_sq_agent1",
    "err_sq_agent_min",
    "err_sq_agent_max",
    "err_sq_virtual",
    "dbar_value_err_agent1",
];

/// Shortest round-trip scientific notation, so files are byte-stable.
fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_trace<W: Write>(out: W, trace: &RunTrace) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (t, errs) in trace.agent_errors.iter().enumerate() {
        let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            t.to_string(),
            num(errs[0]),
            num(min),
            num(max),
            num(trace.virtual_errors[t]),
            num(trace.dbar_value_err_agent1[t]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One curve of a chart, optionally with a symmetric band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
    pub band: Option<Vec<f64>>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained SVG line chart on a log10 y axis. Non-positive values are
/// clamped to the smallest positive value present.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let (width, height, margin) = (720.0, 440.0, 60.0);
    let positive = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| *v > 0.0 && v.is_finite());
    let floor = positive.clone().fold(f64::INFINITY, f64::min);
    let top = series
        .iter()
        .flat_map(|s| {
            let band = s.band.as_deref();
            s.values
                .iter()
                .enumerate()
                .map(move |(i, v)| v + band.map_or(0.0, |b| b[i]))
        })
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if floor.is_finite() && top > floor {
        (floor.log10(), top.log10())
    } else {
        (-1.0, 1.0)
    };
    let span_x = series
        .iter()
        .map(|s| s.values.len())
        .max()
        .unwrap_or(1)
        .saturating_sub(1)
        .max(1) as f64;
    let px = |i: usize| margin + (width - 2.0 * margin) * i as f64 / span_x;
    let py = |v: f64| {
        let l = if v > 0.0 && v.is_finite() {
            v.log10().max(lo)
        } else {
            lo
        };
        height - margin - (height - 2.0 * margin) * (l - lo) / (hi - lo)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = margin,
        b = height - margin,
        r = width - margin
    );
    for decade in lo.ceil() as i32..=hi.floor() as i32 {
        let y = py(10f64.powi(decade));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e{decade}</text>"#,
            margin - 6.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">round</text>"#,
        width / 2.0,
        height - 20.0
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut d = String::new();
            for (i, (v, b)) in s.values.iter().zip(band).enumerate() {
                let _ = write!(d, "{}{:.1} {:.1} ", if i == 0 { "M" } else { "L" }, px(i), py(v + b));
            }
            for (i, (v, b)) in s.values.iter().zip(band).enumerate().rev() {
                let _ = write!(d, "L{:.1} {:.1} ", px(i), py(v - b));
            }
            let _ = writeln!(
                svg,
                r#"<path d="{}Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                d
            );
        }
        let mut d = String::new();
        for (i, v) in s.values.iter().enumerate() {
            let _ = write!(d, "{}{:.1} {:.1} ", if i == 0 { "M" } else { "L" }, px(i), py(*v));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            width - margin - 120.0,
            margin + 16.0 * (k as f64 + 1.0),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-round mean and population standard deviation across equal-length runs.
pub fn mean_and_std(runs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let count = runs.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = runs.iter().map(|r| r[t]).sum::<f64>() / count;
        let var = runs.iter().map(|r| (r[t] - m) * (r[t] - m)).sum::<f64>() / count;
        mean[t] = m;
        std[t] = var.sqrt();
    }
    (mean, std)
}
