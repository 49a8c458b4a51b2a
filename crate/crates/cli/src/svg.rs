//! Minimal static SVG line and histogram charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn frame(out: &mut String, title: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
"#,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}" text-anchor="middle">{:.4}</text>"#, H - PAD + 15.0, x.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{:.4}</text>"#, W - PAD, H - PAD + 15.0, x.1);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, PAD - 4.0, H - PAD, y.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, PAD - 4.0, PAD + 4.0, y.1);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sx(x: f64, b: (f64, f64)) -> f64 {
    PAD + (x - b.0) / (b.1 - b.0) * (W - 2.0 * PAD)
}

fn sy(y: f64, b: (f64, f64)) -> f64 {
    H - PAD - (y - b.0) / (b.1 - b.0) * (H - 2.0 * PAD)
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 110.0,
            y - 9.0,
            COLORS[i % COLORS.len()],
            W - PAD - 96.0,
            y,
            escape(label)
        );
    }
}

pub fn line_chart(title: &str, series: &[Series]) -> String {
    let xb = bounds(series.iter().flat_map(|s| s.xs.iter().copied()));
    let yb = bounds(series.iter().flat_map(|s| s.ys.iter().copied()));
    let mut out = String::new();
    frame(&mut out, title, xb, yb);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x, xb), sy(y, yb)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    if series.len() <= COLORS.len() {
        legend(&mut out, &series.iter().map(|s| s.label).collect::<Vec<_>>());
    }
    out.push_str("</svg>\n");
    out
}

/// Overlaid histograms sharing `edges`.
pub fn histogram(title: &str, edges: &[f64], groups: &[(&str, &[usize])]) -> String {
    let xb = bounds(edges.iter().copied());
    let top = groups
        .iter()
        .flat_map(|(_, c)| c.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let yb = (0.0, top);
    let mut out = String::new();
    frame(&mut out, title, xb, yb);
    for (i, (_, counts)) in groups.iter().enumerate() {
        for (k, &c) in counts.iter().enumerate() {
            let (x0, x1) = (sx(edges[k], xb), sx(edges[k + 1], xb));
            let y = sy(c as f64, yb);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.5"/>"#,
                (x1 - x0).max(0.0),
                (H - PAD - y).max(0.0),
                COLORS[i % COLORS.len()]
            );
        }
    }
    legend(&mut out, &groups.iter().map(|(l, _)| *l).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
