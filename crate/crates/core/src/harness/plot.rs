//! Minimal SVG rendering of output CSVs: line plots (optionally with a
//! logarithmic value axis) and phase-map heatmaps.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of several `(label, xs, ys)` series. With `log_y`, non-positive
/// values are dropped.
pub fn line_plot(title: &str, x_label: &str, series: &[(String, Vec<f64>, Vec<f64>)], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, xs, ys)| {
            xs.iter()
                .zip(ys)
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || **y > 0.0))
                .map(|(x, y)| (*x, tf(*y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let ylab = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.0}</text>"#, sx(fx), H - PAD + 16.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#, PAD - 4.0, sy(fy) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 15.0, escape(x_label));
    for (i, ((label, _, _), p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = PAD + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - PAD - 110.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap of phase labels on a `(mu, g)` grid. `cells` holds
/// `(mu, g, label)`; labels starting with `OP`, `CP` and `DP` get
/// blue, orange and red.
pub fn phase_map_svg(cells: &[(f64, f64, String)]) -> String {
    let mut mus: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut gs: Vec<f64> = cells.iter().map(|c| c.1).collect();
    for v in [&mut mus, &mut gs] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let (nx, ny) = (mus.len().max(1) as f64, gs.len().max(1) as f64);
    let cw = (W - 2.0 * PAD) / nx;
    let ch = (H - 2.0 * PAD) / ny;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">phase map (x: mu, y: g)</text>"#, W / 2.0);
    for (mu, g, label) in cells {
        let ix = mus.iter().position(|m| m == mu).unwrap_or(0) as f64;
        let iy = gs.iter().position(|v| v == g).unwrap_or(0) as f64;
        let color = match label.get(..2) {
            Some("OP") => "#4c72b0",
            Some("CP") => "#ff9f40",
            Some("DP") => "#d9534f",
            _ => "#cccccc",
        };
        let (x, y) = (PAD + ix * cw, H - PAD - (iy + 1.0) * ch);
        let _ = writeln!(svg, r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{color}" stroke="white"/>"#);
        if cw > 28.0 && ch > 14.0 {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0,
                escape(label)
            );
        }
    }
    for (i, mu) in mus.iter().enumerate() {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{mu}</text>"#, PAD + (i as f64 + 0.5) * cw, H - PAD + 14.0);
    }
    for (i, g) in gs.iter().enumerate() {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{g}</text>"#, PAD - 4.0, H - PAD - (i as f64 + 0.5) * ch + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}
