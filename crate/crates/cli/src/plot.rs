//! SVG line and scatter plots. The data of every plot is also written as CSV
//! by the caller.

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use std::path::Path;

use crate::io::Provenance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Line,
    Points,
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

pub struct Figure<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

const COLORS: [RGBColor; 5] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
];

fn bounds(fig: &Figure) -> Option<((f64, f64), (f64, f64))> {
    let pts = fig.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let mut b: Option<((f64, f64), (f64, f64))> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => ((x, x), (y, y)),
            Some(((x0, x1), (y0, y1))) => ((x0.min(x), x1.max(x)), (y0.min(y), y1.max(y))),
        });
    }
    b.map(|((x0, x1), (y0, y1))| (pad(x0, x1), pad(y0, y1)))
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let d = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1e-12) };
    (lo - d, hi + d)
}

/// Render `fig` as SVG with the provenance comment after the root element.
pub fn write_svg(path: &Path, prov: &Provenance, fig: &Figure) -> Result<()> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("plot: {e}"))?;
        let ((x0, x1), (y0, y1)) = bounds(fig).unwrap_or(((0.0, 1.0), (0.0, 1.0)));
        let mut chart = ChartBuilder::on(&root)
            .caption(fig.title, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(80)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| anyhow!("plot: {e}"))?;
        chart.configure_mesh().x_desc(fig.x_label).y_desc(fig.y_label).draw().map_err(|e| anyhow!("plot: {e}"))?;
        for (i, s) in fig.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64)> =
                s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            let anno = match s.style {
                Style::Line => chart.draw_series(LineSeries::new(pts, color.stroke_width(2))),
                Style::Points => chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 2, color.filled()))),
            }
            .map_err(|e| anyhow!("plot: {e}"))?;
            anno.label(s.name).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| anyhow!("plot: {e}"))?;
        root.present().map_err(|e| anyhow!("plot: {e}"))?;
    }
    let out = match svg.find('>') {
        Some(i) => format!("{}\n{}{}", &svg[..=i], prov.svg_comment(), &svg[i + 1..]),
        None => svg,
    };
    std::fs::write(path, out)?;
    Ok(())
}
