use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;

use super::text::write_text;
use crate::error::{Error, Result};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 0.05;
const RADIUS: f64 = 2.5;

const PALETTE: [&str; 20] = [
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f", "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
];

/// Scatter plot of a 2-D embedding as a standalone SVG document.
pub fn scatter_svg(z: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<String> {
    if z.ncols() != 2 {
        return Err(Error::invalid(format!(
            "scatter plots need a 2-D embedding, got {} dimensions; rerun with a 2-D output",
            z.ncols()
        )));
    }
    if let Some(l) = labels {
        if l.len() != z.nrows() {
            return Err(Error::invalid(format!("{} labels for {} points", l.len(), z.nrows())));
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embedding contains non-finite coordinates"));
    }
    let bounds = |c: usize| {
        let col = z.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo, (hi - lo).max(1e-12))
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, xs) = bounds(0);
    let (y0, ys) = bounds(1);
    let inner = SIZE * (1.0 - 2.0 * MARGIN);
    let scale = inner / xs.max(ys);
    let off_x = SIZE * MARGIN + (inner - xs * scale) / 2.0;
    let off_y = SIZE * MARGIN + (inner - ys * scale) / 2.0;

    let mut out = String::new();
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (i, p) in z.rows().into_iter().enumerate() {
        let cx = off_x + (p[0] - x0) * scale;
        let cy = SIZE - (off_y + (p[1] - y0) * scale);
        let color = PALETTE[labels.map_or(0, |l| l[i]) % PALETTE.len()];
        writeln!(
            out,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{RADIUS}" fill="{color}"/>"#
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_scatter_svg(z: ArrayView2<'_, f64>, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    write_text(path, &scatter_svg(z, labels)?)
}
