//! Lightweight artifact writers: CSV tables, SVG overlays, OBJ meshes.
//!
//! These are deliberately dependency-free; every writer produces
//! deterministic byte-for-byte output for identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// Format a float for artifacts: shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string() // collapse -0
    } else {
        format!("{v}")
    }
}

/// Write a CSV file with a header row and float columns.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A single drawable element of an SVG scene.
pub enum SvgElement {
    /// Polyline in data coordinates with stroke color and width.
    Path {
        points: Vec<[f64; 2]>,
        color: String,
        width: f64,
        closed: bool,
    },
    /// Marker circle in data coordinates.
    Dot {
        center: [f64; 2],
        radius: f64,
        color: String,
    },
    /// Text label anchored at a data point.
    Label {
        at: [f64; 2],
        text: String,
        color: String,
    },
}

/// Render elements into a standalone SVG, mapping the data bounding box onto
/// a fixed canvas with a small margin.  The y-axis points up.
pub fn write_svg(path: &Path, elements: &[SvgElement], title: &str) -> Result<()> {
    const W: f64 = 800.0;
    const H: f64 = 800.0;
    const MARGIN: f64 = 40.0;

    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    let mut consider = |p: &[f64; 2]| {
        for i in 0..2 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    };
    for el in elements {
        match el {
            SvgElement::Path { points, .. } => points.iter().for_each(&mut consider),
            SvgElement::Dot { center, .. } => consider(center),
            SvgElement::Label { at, .. } => consider(at),
        }
    }
    if !min[0].is_finite() {
        min = [0.0, 0.0];
        max = [1.0, 1.0];
    }
    let span = [(max[0] - min[0]).max(1e-12), (max[1] - min[1]).max(1e-12)];
    let scale = ((W - 2.0 * MARGIN) / span[0]).min((H - 2.0 * MARGIN) / span[1]);
    let to_px = |p: &[f64; 2]| -> (f64, f64) {
        (
            MARGIN + (p[0] - min[0]) * scale,
            H - MARGIN - (p[1] - min[1]) * scale,
        )
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<title>{title}</title>");
    let _ = writeln!(
        svg,
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>"
    );
    for el in elements {
        match el {
            SvgElement::Path {
                points,
                color,
                width,
                closed,
            } => {
                if points.is_empty() {
                    continue;
                }
                let mut d = String::new();
                for (i, p) in points.iter().enumerate() {
                    let (px, py) = to_px(p);
                    let _ = write!(d, "{}{px:.2} {py:.2} ", if i == 0 { "M" } else { "L" });
                }
                if *closed {
                    d.push('Z');
                }
                let _ = writeln!(
                    svg,
                    "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
                    d.trim_end()
                );
            }
            SvgElement::Dot {
                center,
                radius,
                color,
            } => {
                let (px, py) = to_px(center);
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"{radius}\" fill=\"{color}\"/>"
                );
            }
            SvgElement::Label { at, text, color } => {
                let (px, py) = to_px(at);
                let _ = writeln!(
                    svg,
                    "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\" font-size=\"14\">{text}</text>",
                    px + 6.0,
                    py - 6.0
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Write a quad-gridded surface as an OBJ file.  `vertices[i][j]` is the
/// position of grid node `(i, j)`; `colors[i][j]`, if given, is appended as
/// a grayscale vertex color.  Triangulates each grid quad.
pub fn write_obj_grid(
    path: &Path,
    vertices: &[Vec<[f64; 3]>],
    colors: Option<&[Vec<f64>]>,
) -> Result<()> {
    let mut out = String::new();
    let rows = vertices.len();
    let cols = if rows > 0 { vertices[0].len() } else { 0 };
    for (i, row) in vertices.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            match colors {
                Some(c) => {
                    let g = c[i][j].clamp(0.0, 1.0);
                    let _ = writeln!(
                        out,
                        "v {} {} {} {g:.4} {g:.4} {g:.4}",
                        fmt_f64(v[0]),
                        fmt_f64(v[1]),
                        fmt_f64(v[2])
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "v {} {} {}",
                        fmt_f64(v[0]),
                        fmt_f64(v[1]),
                        fmt_f64(v[2])
                    );
                }
            }
        }
    }
    let idx = |i: usize, j: usize| (i * cols + j + 1) as u64; // OBJ is 1-based
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols.saturating_sub(1) {
            let _ = writeln!(out, "f {} {} {}", idx(i, j), idx(i + 1, j), idx(i + 1, j + 1));
            let _ = writeln!(out, "f {} {} {}", idx(i, j), idx(i + 1, j + 1), idx(i, j + 1));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
