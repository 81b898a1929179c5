//! Minimal SVG figures. Plan views put east on the horizontal axis and
//! north upwards.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::geom::Pose;
use crate::viewgraph::ViewGraph;
use crate::weak_area::{is_weak, WeakAreaConfig};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

struct Frame {
    min: (f64, f64),
    scale: f64,
}

impl Frame {
    /// Equal-aspect frame over `(east, north)` points.
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for (e, n) in points {
            lo = (lo.0.min(e), lo.1.min(n));
            hi = (hi.0.max(e), hi.1.max(n));
        }
        if !lo.0.is_finite() {
            return Frame { min: (0.0, 0.0), scale: 1.0 };
        }
        let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-9);
        Frame {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: (f64, f64)) -> (f64, f64) {
        (
            MARGIN + (p.0 - self.min.0) * self.scale,
            SIZE - MARGIN - (p.1 - self.min.1) * self.scale,
        )
    }
}

fn plan(p: &Pose) -> (f64, f64) {
    let c = p.center();
    (c.y, c.x)
}

fn open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">
<rect width="100%" height="100%" fill="white"/>
<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="16">{title}</text>
"#
    );
}

fn polyline(out: &mut String, frame: &Frame, pts: impl Iterator<Item = (f64, f64)>, stroke: &str) {
    let coords: Vec<String> = pts
        .map(|p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
        coords.join(" ")
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = SIZE - 12.0 - 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="12">{label}</text>"#,
            y - 10.0,
            MARGIN + 18.0
        );
    }
}

/// Navigation prior, reconstructed and (optionally) true camera tracks.
pub fn trajectory_svg(priors: &[Pose], estimate: &BTreeMap<u32, Pose>, truth: Option<&[Pose]>) -> String {
    let frame = Frame::fit(
        priors
            .iter()
            .chain(estimate.values())
            .chain(truth.unwrap_or(&[]))
            .map(plan),
    );
    let mut out = String::new();
    open(&mut out, "Camera trajectory (plan view)");
    polyline(&mut out, &frame, priors.iter().map(plan), "#999999");
    if let Some(t) = truth {
        polyline(&mut out, &frame, t.iter().map(plan), "#2ca02c");
    }
    polyline(&mut out, &frame, estimate.values().map(plan), "#1f77b4");
    for p in estimate.values() {
        let (x, y) = frame.map(plan(p));
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#1f77b4"/>"##);
    }
    let mut entries = vec![("navigation prior", "#999999"), ("reconstruction", "#1f77b4")];
    if truth.is_some() {
        entries.push(("ground truth", "#2ca02c"));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// View-graph edges drawn between camera positions; weak edges in red.
pub fn connectivity_svg(graph: &ViewGraph, positions: &[Pose], weak: &WeakAreaConfig) -> String {
    let frame = Frame::fit(positions.iter().map(plan));
    let mut out = String::new();
    open(&mut out, "View-graph connectivity");
    for e in graph.edges.values() {
        let (a, b) = (frame.map(plan(&positions[e.i as usize])), frame.map(plan(&positions[e.j as usize])));
        let (color, width) = if is_weak(e.n_m, e.n_p, weak) {
            ("#d62728", 1.5)
        } else {
            ("#7f7f7f", 0.5)
        };
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{width}" stroke-opacity="0.7"/>"#,
            a.0, a.1, b.0, b.1
        );
    }
    for p in positions {
        let (x, y) = frame.map(plan(p));
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="black"/>"#);
    }
    legend(&mut out, &[("edge", "#7f7f7f"), ("weak edge", "#d62728")]);
    out.push_str("</svg>\n");
    out
}

/// Histogram of the number of relative constraints per image, before and
/// (optionally) after the weak-area revisit.
pub fn constraint_histogram_svg(before: &[usize], after: Option<&[usize]>) -> String {
    let max = before.iter().chain(after.unwrap_or(&[])).copied().max().unwrap_or(0);
    let bins = max + 1;
    let count = |v: &[usize]| {
        let mut h = vec![0usize; bins];
        for &x in v {
            h[x] += 1;
        }
        h
    };
    let hb = count(before);
    let ha = after.map(count);
    let peak = hb.iter().chain(ha.iter().flatten()).copied().max().unwrap_or(1).max(1) as f64;
    let width = (SIZE - 2.0 * MARGIN) / bins as f64;
    let height = SIZE - 3.0 * MARGIN;
    let mut out = String::new();
    open(&mut out, "Relative constraints per image");
    let series: Vec<(&[usize], &str)> = match &ha {
        Some(a) => vec![(&hb, "#ff7f0e"), (a, "#1f77b4")],
        None => vec![(&hb, "#ff7f0e")],
    };
    let bar = width / series.len() as f64;
    for (s, (h, color)) in series.iter().enumerate() {
        for (k, &c) in h.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let hgt = c as f64 / peak * height;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{hgt:.2}" fill="{color}"/>"#,
                MARGIN + k as f64 * width + s as f64 * bar,
                SIZE - 2.0 * MARGIN - hgt,
                bar.max(0.5)
            );
        }
    }
    let step = bins.div_ceil(10).max(1);
    for k in (0..bins).step_by(step) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{k}</text>"#,
            MARGIN + (k as f64 + 0.25) * width,
            SIZE - 2.0 * MARGIN + 14.0
        );
    }
    let mut entries = vec![("first pass", "#ff7f0e")];
    if after.is_some() {
        entries.push(("after revisit", "#1f77b4"));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
