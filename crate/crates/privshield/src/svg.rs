//! Small hand-written SVG plots. Output is a pure function of the input.

use std::fmt::Write;

use crate::stats::Summary;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

pub struct CurvePoint {
    pub label: String,
    pub x: Summary,
    pub y: Summary,
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        let pad = ((hi - lo) * 0.08).max(1e-3);
        Axis { lo: lo - pad, hi: hi + pad }
    }
    fn to_x(&self, v: f64) -> f64 {
        MARGIN + (v - self.lo) / (self.hi - self.lo) * (W - 1.5 * MARGIN)
    }
    fn to_y(&self, v: f64) -> f64 {
        H - MARGIN - (v - self.lo) / (self.hi - self.lo) * (H - 1.5 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, xa: &Axis, ya: &Axis) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 2.0);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = xa.lo + t * (xa.hi - xa.lo);
        let yv = ya.lo + t * (ya.hi - ya.lo);
        let (px, py) = (xa.to_x(xv), ya.to_y(yv));
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, y0 + 14.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, x0 - 4.0, py + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

/// Means joined in input order, with range bars on both axes.
pub fn tradeoff_plot(title: &str, xlabel: &str, ylabel: &str, points: &[CurvePoint]) -> String {
    let xa = Axis::fit(points.iter().flat_map(|p| [p.x.min, p.x.max]));
    let ya = Axis::fit(points.iter().flat_map(|p| [p.y.min, p.y.max]));
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, &xa, &ya);
    let finite: Vec<&CurvePoint> = points.iter().filter(|p| p.x.mean.is_finite() && p.y.mean.is_finite()).collect();
    if finite.len() > 1 {
        let d: Vec<String> = finite.iter().map(|p| format!("{:.1} {:.1}", xa.to_x(p.x.mean), ya.to_y(p.y.mean))).collect();
        let _ = writeln!(out, r#"<path d="M{}" stroke="{}" fill="none"/>"#, d.join(" L"), PALETTE[0]);
    }
    for p in finite {
        let (cx, cy) = (xa.to_x(p.x.mean), ya.to_y(p.y.mean));
        let _ = writeln!(out, r#"<path d="M{:.1} {cy:.1} L{:.1} {cy:.1} M{cx:.1} {:.1} L{cx:.1} {:.1}" stroke="gray"/>"#,
            xa.to_x(p.x.min), xa.to_x(p.x.max), ya.to_y(p.y.min), ya.to_y(p.y.max));
        let _ = writeln!(out, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3.5" fill="{}"/>"#, PALETTE[0]);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, cx + 6.0, cy - 6.0, escape(&p.label));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of 2-D feature coordinates, one color per attribute-pair group.
pub fn projection_plot(title: &str, points: &[[f64; 2]], groups: &[u8]) -> String {
    let xa = Axis::fit(points.iter().map(|p| p[0]));
    let ya = Axis::fit(points.iter().map(|p| p[1]));
    let mut out = String::new();
    frame(&mut out, title, "component 1", "component 2", &xa, &ya);
    for (p, &g) in points.iter().zip(groups) {
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            xa.to_x(p[0]), ya.to_y(p[1]), PALETTE[g as usize % PALETTE.len()]);
    }
    for (g, color) in PALETTE.iter().enumerate() {
        let y = 40.0 + 14.0 * g as f64;
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{y:.1}" r="4" fill="{color}"/>"#, W - 110.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">attrs {}{}</text>"#, W - 100.0, y + 4.0, g >> 1, g & 1);
    }
    out.push_str("</svg>\n");
    out
}
