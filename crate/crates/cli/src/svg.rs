//! Log-log convergence plot of a trace, as a standalone SVG document.
//!
//! The output depends only on the rows passed in. Rows with a non-positive or
//! non-finite gap, or at iteration 0, cannot be placed on log axes and are skipped.

use std::fmt::Write;

use otwb::hpd::TraceRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Least-squares slope of `log10 gap` against `log10 iter`; `None` below two points.
pub fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn log_points(rows: &[TraceRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.iter > 0 && r.gap_rounded > 0.0 && r.gap_rounded.is_finite())
        .map(|r| ((r.iter as f64).log10(), r.gap_rounded.log10()))
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(rows: &[TraceRow], title: &str) -> String {
    let pts = log_points(rows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    if pts.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">no positive gaps to plot</text>"#, W / 2.0, H / 2.0);
        out.push_str("</svg>\n");
        return out;
    }
    // Axis ranges snapped to whole decades.
    let x_lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor();
    let mut x_hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
    let y_lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let mut y_hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    for d in (x_lo as i32)..=(x_hi as i32) {
        let x = sx(d as f64);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#, TOP + ph + 16.0);
    }
    for d in (y_lo as i32)..=(y_hi as i32) {
        let y = sy(d as f64);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">rounded gap</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(out, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##, path.join(" "));
    if let Some(slope) = fitted_slope(&pts) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">fitted slope {slope:.3}</text>"#,
            LEFT + pw - 8.0,
            TOP + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}
