//! Run artifacts: CSV with a manifest header, JSON report and SVG plots.
//!
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::experiments::analysis::Analysis;
use crate::experiments::SweepResult;
use crate::{Error, Result};

pub const REPORT_SCHEMA: u32 = 1;

/// Provenance echoed into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub code_version: &'static str,
    /// Resolved configuration as TOML.
    pub config: String,
}

impl Provenance {
    pub fn new(seed: u64, config: String) -> Provenance {
        Provenance { seed, code_version: env!("CARGO_PKG_VERSION"), config }
    }
}

/// CSV text: `#` comment block (manifest and config), header row, one row per
/// point and direction.
pub fn csv(result: &SweepResult, prov: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# qdhole {} sweep", result.kind);
    let _ = writeln!(out, "# seed = {}", prov.seed);
    let _ = writeln!(out, "# code_version = {}", prov.code_version);
    for a in &result.axes {
        let _ = writeln!(out, "# axis {} [{}] x {}", a.name, a.unit, a.values.len());
    }
    let _ = writeln!(out, "# manifest = {}", result.manifest);
    let _ = writeln!(out, "# config:");
    for line in prov.config.lines() {
        let _ = writeln!(out, "#   {line}");
    }
    let names: Vec<&str> = result.axes.iter().map(|a| a.name.as_str()).collect();
    let _ = writeln!(out, "{},direction,mean_counts,shots,std_err", names.join(","));
    for s in &result.series {
        for i in 0..result.n_points() {
            for v in result.point(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{},{},{}", s.direction.as_str(), s.mean_counts[i], s.shots[i], s.std_err[i]);
        }
    }
    out
}

/// Report JSON (`"schema": 1`): provenance, manifest, fits and derived numbers.
pub fn report(result: &SweepResult, analysis: &Analysis, prov: &Provenance, extra: Option<serde_json::Value>) -> Result<String> {
    let mut v = serde_json::json!({
        "schema": REPORT_SCHEMA,
        "kind": result.kind,
        "seed": prov.seed,
        "code_version": prov.code_version,
        "config": prov.config,
        "manifest": result.manifest,
        "analysis": analysis,
    });
    if let Some(x) = extra {
        v["extra"] = x;
    }
    serde_json::to_string_pretty(&v).map_err(|e| Error::Domain(format!("report serialization: {e}")))
}

/// Paths written by [`write_artifacts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub svg: Option<PathBuf>,
}

/// Writes `<stem>.csv`, `<stem>.report.json` and optionally `<stem>.svg` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    stem: &str,
    result: &SweepResult,
    analysis: &Analysis,
    prov: &Provenance,
    plot: bool,
    extra: Option<serde_json::Value>,
) -> Result<Artifacts> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, csv(result, prov))?;
    let report_path = dir.join(format!("{stem}.report.json"));
    fs::write(&report_path, report(result, analysis, prov, extra)?)?;
    let svg = if plot {
        let p = dir.join(format!("{stem}.svg"));
        fs::write(&p, svg_for(result, stem, prov))?;
        Some(p)
    } else {
        None
    };
    Ok(Artifacts { csv: csv_path, report: report_path, svg })
}

/// Line plot for one-axis sweeps, heat map for two-axis sweeps.
pub fn svg_for(result: &SweepResult, title: &str, prov: &Provenance) -> String {
    let desc = format!("seed {}; manifest {}", prov.seed, result.manifest);
    if result.axes.len() == 2 {
        let s = &result.series[0];
        let (x, y) = (&result.axes[1], &result.axes[0]);
        return heatmap(title, &label(x), &label(y), &x.values, &y.values, &s.mean_counts, &desc);
    }
    let x = &result.axes[0];
    let mut lines = Vec::new();
    for (k, s) in result.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        lines.push(Line { label: format!("{} data", s.direction.as_str()), x: x.values.clone(), y: s.mean_counts.clone(), color, dots: true });
        lines.push(Line { label: format!("{} model", s.direction.as_str()), x: x.values.clone(), y: s.expected.clone(), color, dots: false });
    }
    line_plot(title, &label(x), "mean counts / shot", &lines, &desc)
}

fn label(a: &crate::experiments::Axis) -> String {
    if a.unit.is_empty() {
        a.name.clone()
    } else {
        format!("{} [{}]", a.name, a.unit)
    }
}

const PALETTE: [&str; 4] = ["#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const M: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 55.0); // left, right, top, bottom

pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    /// Markers instead of a polyline.
    pub dots: bool,
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, desc: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>\n<desc>{}</desc>", escape(title), escape(desc));
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes_frame(out: &mut String, xl: &str, yl: &str, xr: (f64, f64), yr: (f64, f64)) {
    let (l, r, t, b) = M;
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - l - r, H - t - b);
    for k in 0..=4 {
        let f = f64::from(k) / 4.0;
        let px = l + f * (W - l - r);
        let py = H - b - f * (H - t - b);
        let _ = writeln!(out, r#"<text x="{px}" y="{}" text-anchor="middle">{:.3e}</text>"#, H - b + 16.0, xr.0 + f * (xr.1 - xr.0));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, l - 4.0, py + 4.0, yr.0 + f * (yr.1 - yr.0));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(xl));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(yl)
    );
}

/// Dependency-free line plot.
pub fn line_plot(title: &str, xl: &str, yl: &str, lines: &[Line], desc: &str) -> String {
    let mut out = String::new();
    header(&mut out, title, desc);
    let xr = range(lines.iter().flat_map(|l| l.x.iter().copied()));
    let yr = range(lines.iter().flat_map(|l| l.y.iter().copied()));
    axes_frame(&mut out, xl, yl, xr, yr);
    let (l, r, t, b) = M;
    let px = |x: f64| l + (x - xr.0) / (xr.1 - xr.0) * (W - l - r);
    let py = |y: f64| H - b - (y - yr.0) / (yr.1 - yr.0) * (H - t - b);
    for (k, line) in lines.iter().enumerate() {
        let pts = line.x.iter().zip(&line.y).filter(|(x, y)| x.is_finite() && y.is_finite());
        if line.dots {
            for (x, y) in pts {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#, px(*x), py(*y), line.color);
            }
        } else {
            let d: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, d.join(" "), line.color);
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - r - 150.0,
            t + 16.0 + 14.0 * k as f64,
            line.color,
            escape(&line.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Dependency-free heat map of `z[row * x.len() + col]`, rows along `y`.
pub fn heatmap(title: &str, xl: &str, yl: &str, x: &[f64], y: &[f64], z: &[f64], desc: &str) -> String {
    let mut out = String::new();
    header(&mut out, title, desc);
    let xr = range(x.iter().copied());
    let yr = range(y.iter().copied());
    axes_frame(&mut out, xl, yl, xr, yr);
    let zr = range(z.iter().copied());
    let (l, r, t, b) = M;
    let cw = (W - l - r) / x.len().max(1) as f64;
    let ch = (H - t - b) / y.len().max(1) as f64;
    for (row, _) in y.iter().enumerate() {
        for (col, _) in x.iter().enumerate() {
            let v = z.get(row * x.len() + col).copied().unwrap_or(f64::NAN);
            let f = if v.is_finite() { ((v - zr.0) / (zr.1 - zr.0)).clamp(0.0, 1.0) } else { 0.0 };
            let (cr, cg, cb) = (255.0 * f, 255.0 * (1.0 - (2.0 * f - 1.0).abs()), 255.0 * (1.0 - f));
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{:02x}{:02x}{:02x}"/>"##,
                l + col as f64 * cw,
                H - b - (row + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                cr as u8,
                cg as u8,
                cb as u8
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
