//! Artifact writers: trajectory CSVs and line plots as SVG.
//!
//! Trajectory CSV columns, one row per `(draw, realization, t)` with
//! `t = 0..=T`:
//!
//! ```text
//! draw,realization,t,x0..x{n-1},u0..u{m-1},stage_cost,certified
//! ```
//!
//! At `t = T` the input columns are empty and `stage_cost` holds the terminal
//! cost. Numbers use the shortest representation that reads back exactly.

use std::fmt::Write as _;
use std::path::Path;

use srhc_core::simulator::TrajectoryBatch;

use crate::error::{io_err, Result};

pub fn trajectory_header(n: usize, m: usize) -> String {
    let mut h = String::from("draw,realization,t");
    for i in 0..n {
        let _ = write!(h, ",x{i}");
    }
    for i in 0..m {
        let _ = write!(h, ",u{i}");
    }
    h.push_str(",stage_cost,certified\n");
    h
}

/// Appends the rows of one batch (one initial state) to `out`.
pub fn append_trajectory_rows(out: &mut String, draw: usize, batch: &TrajectoryBatch, m: usize) {
    for r in &batch.realizations {
        let p = &r.path;
        for (t, x) in p.states.iter().enumerate() {
            let _ = write!(out, "{draw},{},{t}", r.stream);
            for v in x.iter() {
                let _ = write!(out, ",{v}");
            }
            match p.inputs.get(t) {
                Some(u) => {
                    for v in u.iter() {
                        let _ = write!(out, ",{v}");
                    }
                }
                None => out.push_str(&",".repeat(m)),
            }
            let _ = writeln!(out, ",{},{}", p.stage_costs[t], u8::from(p.certified));
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A line plot of `series` against `t = 1, 2, …`. The vertical axis is
/// logarithmic when the positive values span more than three decades.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (96.0, 20.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let len = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(1);
    let finite = || series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    // Non-positive values are left out of a logarithmic plot.
    let pos_lo = finite().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let log = hi > 0.0 && pos_lo.is_finite() && hi / pos_lo > 1e3;
    if log {
        lo = pos_lo;
    }
    let map = |v: f64| if log { v.log10() } else { v };
    let (mut y0, mut y1) = (map(lo), map(hi));
    if y1 - y0 < 1e-12 * y1.abs().max(1.0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |i: usize| left + pw * if len > 1 { i as f64 / (len - 1) as f64 } else { 0.5 };
    let py = |v: f64| top + ph * (1.0 - (map(v) - y0) / (y1 - y0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let y = top + ph * (1.0 - f);
        let label = if log { format!("1e{yv:.1}") } else { format!("{yv:.3e}") };
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, left - 6.0, y + 4.0);
        let xi = (f * (len - 1) as f64).round() as usize;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(xi), top + ph + 18.0, xi + 1);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&format!("{y_label}{}", if log { " (log scale)" } else { "" }))
    );
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (i, &v) in ser.values.iter().enumerate() {
            if v.is_finite() && (!log || v > 0.0) {
                let _ = write!(pts, "{:.2},{:.2} ", px(i), py(v));
            }
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.trim_end());
        let ly = top + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + 10.0,
            left + 30.0,
            left + 36.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
