use std::fmt::Write as _;
use std::io::Write;

use super::{AnalysisError, ProjectionPoint};

pub const CSV_HEADER: [&str; 8] = ["pc1", "pc2", "pc3", "dlong", "dlat", "dtheta", "color", "opacity"];
pub const SVG_SIZE: u32 = 800;
const MARGIN: f64 = 40.0;

/// Jet colormap: blue at 0, cyan, yellow, red at 1. Components in `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// One row per point. Missing projection coordinates (k < 3) are left empty.
pub fn write_csv<W: Write>(points: &[ProjectionPoint], w: W) -> Result<(), AnalysisError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for p in points {
        let mut rec: Vec<String> = (0..3)
            .map(|i| p.coords.get(i).map_or(String::new(), |v| v.to_string()))
            .collect();
        rec.extend(
            [p.truth.dlong, p.truth.dlat, p.truth.dtheta, p.color_value, p.opacity]
                .iter()
                .map(f64::to_string),
        );
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Scatter of the first two coordinates, coloured with [`jet`].
pub fn render_svg(points: &[ProjectionPoint], title: &str) -> String {
    let size = SVG_SIZE as f64;
    let coord = |p: &ProjectionPoint, i: usize| p.coords.get(i).copied().unwrap_or(0.0);
    let range = |i: usize| {
        let lo = points.iter().map(|p| coord(p, i)).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| coord(p, i)).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let span = size - 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        size / 2.0,
        escape(title)
    );
    for p in points {
        let x = MARGIN + (coord(p, 0) - x0) / (x1 - x0) * span;
        let y = size - MARGIN - (coord(p, 1) - y0) / (y1 - y0) * span;
        let [r, g, b] = jet(p.color_value);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="rgb({},{},{})" fill-opacity="{:.3}"/>"#,
            (r * 255.0).round(),
            (g * 255.0).round(),
            (b * 255.0).round(),
            p.opacity
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
