//! Probability-map CSV files, heatmap images and SVG bar plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes a `T×C` matrix as CSV with a header of column names.
pub fn write_matrix_csv(path: &Path, matrix: &Array2<f32>, columns: &[String]) -> Result<()> {
    let mut out = String::from("segment");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (t, row) in matrix.rows().into_iter().enumerate() {
        out.push_str(&t.to_string());
        for v in row {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f32>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let columns: Vec<String> = header.split(',').skip(1).map(String::from).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines.filter(|l| !l.is_empty()) {
        for cell in line.split(',').skip(1) {
            data.push(
                cell.parse::<f32>()
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
            );
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, columns.len()), data)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((columns, m))
}

/// Blue-white-red ramp over `[lo, hi]`.
fn color(v: f32, lo: f32, hi: f32) -> Rgb<u8> {
    let x = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if x < 0.5 {
        let s = x * 2.0;
        (s, s, 1.0)
    } else {
        let s = (1.0 - x) * 2.0;
        (1.0, s, s)
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// Renders a matrix as a PNG heatmap with square cells of `cell` pixels.
pub fn write_heatmap_png(path: &Path, matrix: &Array2<f32>, cell: u32) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let lo = matrix.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = matrix.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let cell = cell.max(1);
    let img = ImageBuffer::from_fn(cols as u32 * cell, rows as u32 * cell, |x, y| {
        color(matrix[[(y / cell) as usize, (x / cell) as usize]], lo, hi)
    });
    img.save(path)?;
    Ok(())
}

/// Minimal SVG bar chart.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let (w, h, margin) = (60.0 * labels.len().max(1) as f64 + 80.0, 320.0, 40.0);
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    let plot_h = h - 2.0 * margin - 20.0;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let v = if v.is_finite() { v } else { 0.0 };
        let bh = plot_h * v / max;
        let x = margin + 60.0 * i as f64;
        let y = h - margin - bh;
        writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"40\" height=\"{bh}\" fill=\"#4a7ab5\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{v:.3}</text>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            x + 20.0,
            y - 4.0,
            x + 20.0,
            h - margin + 14.0,
            escape(label)
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let m = array![[0.25f32, 0.75], [0.1, 0.9], [1.0 / 3.0, 2.0 / 3.0]];
        let cols = vec!["event_0".to_string(), "background".to_string()];
        write_matrix_csv(&path, &m, &cols).unwrap();
        let (c, back) = read_matrix_csv(&path).unwrap();
        assert_eq!(c, cols);
        assert_eq!(back, m);
    }

    #[test]
    fn heatmap_has_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        write_heatmap_png(&path, &array![[0.0f32, 1.0, 0.5], [0.2, 0.3, 0.4]], 4).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (12, 8));
    }

    #[test]
    fn svg_mentions_every_label() {
        let svg = bar_chart_svg("acc", &["a".into(), "b<c".into()], &[0.5, f64::INFINITY]);
        assert!(svg.contains(">a<") && svg.contains("b&lt;c"));
        assert!(svg.starts_with("<svg"));
    }
}
