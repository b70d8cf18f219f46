//! Minimal standalone SVG line plots (no dependencies): used to render
//! forecast-vs-history and training-curve figures.

use std::path::Path;

use crate::error::Result;
use crate::tensor::Real;

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    /// (x, y) points in data coordinates.
    pub points: Vec<(Real, Real)>,
    pub dashed: bool,
}

/// Writes a line plot with axes, per-series colors and a small legend.
pub fn line_plot(path: &Path, title: &str, series: &[Series<'_>]) -> Result<()> {
    let (w, h) = (900.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 40.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let all = series.iter().flat_map(|s| s.points.iter());
    let mut xmin = Real::INFINITY;
    let mut xmax = Real::NEG_INFINITY;
    let mut ymin = Real::INFINITY;
    let mut ymax = Real::NEG_INFINITY;
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    let pad = (ymax - ymin) * 0.05;
    ymin -= pad;
    ymax += pad;
    let sx = |x: Real| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: Real| mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        escape(title)
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#333\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0}\" stroke=\"#333\"/>\n",
        mt + ph,
        ml + pw
    ));
    // y ticks
    for i in 0..=4 {
        let yv = ymin + (ymax - ymin) * i as Real / 4.0;
        let yp = sy(yv);
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{yp}\" x2=\"{ml}\" y2=\"{yp}\" stroke=\"#333\"/>\n\
             <text x=\"{1}\" y=\"{2}\" text-anchor=\"end\">{yv:.3}</text>\n",
            ml - 4.0,
            ml - 8.0,
            yp + 4.0
        ));
    }
    // x ticks
    for i in 0..=6 {
        let xv = xmin + (xmax - xmin) * i as Real / 6.0;
        let xp = sx(xv);
        out.push_str(&format!(
            "<line x1=\"{xp}\" y1=\"{0}\" x2=\"{xp}\" y2=\"{1}\" stroke=\"#333\"/>\n\
             <text x=\"{xp}\" y=\"{2}\" text-anchor=\"middle\">{xv:.0}</text>\n",
            mt + ph,
            mt + ph + 4.0,
            mt + ph + 18.0
        ));
    }
    // series
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} \
             points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = mt + 16.0 * i as Real;
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"{dash}/>\n\
             <text x=\"{2}\" y=\"{3}\">{4}</text>\n",
            ml + pw - 140.0,
            ml + pw - 115.0,
            ml + pw - 110.0,
            ly + 4.0,
            escape(s.label)
        ));
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out)?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
