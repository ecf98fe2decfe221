//! Minimal static SVG charts for the report directory.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(series: &[Series]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in series.iter().flat_map(|s| &s.values).filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    (if lo < 0.0 { lo - pad } else { lo }, hi + pad)
}

fn frame(out: &mut String, title: &str, categories: &[String], lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    let plot_h = H - TOP - BOTTOM;
    let y = move |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = write!(
            out,
            r##"<line x1="{LEFT}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            yy + 4.0,
            tick(v)
        );
    }
    if lo < 0.0 {
        let _ = write!(out, r#"<line x1="{LEFT}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#, W - RIGHT, y(0.0), y(0.0));
    }
    let step = (W - LEFT - RIGHT) / categories.len().max(1) as f64;
    for (i, c) in categories.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + step * (i as f64 + 0.5),
            H - BOTTOM + 18.0,
            escape(c)
        );
    }
    y
}

fn legend(out: &mut String, series: &[Series]) {
    for (k, s) in series.iter().enumerate() {
        let yy = TOP + 18.0 * k as f64;
        let _ = write!(
            out,
            r#"<rect x="{}" y="{yy}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 12.0,
            PALETTE[k % PALETTE.len()],
            W - RIGHT + 30.0,
            yy + 10.0,
            escape(s.name)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.0}k", v / 1e3)
    } else if a >= 10.0 || a == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// One polyline per series over shared categories.
pub fn line_chart(title: &str, categories: &[String], series: &[Series]) -> String {
    let mut out = String::new();
    let (lo, hi) = range(series);
    let y = frame(&mut out, title, categories, lo, hi);
    let step = (W - LEFT - RIGHT) / categories.len().max(1) as f64;
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.1},{:.1}", LEFT + step * (i as f64 + 0.5), y(*v)))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let _ = write!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted point");
            let _ = write!(out, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, categories: &[String], series: &[Series]) -> String {
    let mut out = String::new();
    let (lo, hi) = range(series);
    let y = frame(&mut out, title, categories, lo, hi);
    let step = (W - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = 0.8 * step / series.len().max(1) as f64;
    for (k, s) in series.iter().enumerate() {
        for (i, v) in s.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let x = LEFT + step * (i as f64 + 0.1) + bar * k as f64;
            let (a, b) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = write!(
                out,
                r#"<rect x="{x:.1}" y="{a:.1}" width="{bar:.1}" height="{:.1}" fill="{}"/>"#,
                (b - a).max(0.5),
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}
