//! SVG figures: reward/fidelity scatter with fronts, per-iteration cost and
//! PMP-residual curves, and 2-D trajectory overlays.

use std::path::Path;

use anyhow::{anyhow, ensure, Result};
use plotters::coord::Shift;
use plotters::prelude::*;
use trajedit_core::dynamics::Trajectory;

use crate::harness::{ParetoSummary, SweepMethod};
use crate::report::RunReport;

const METHOD_COLORS: [RGBColor; 5] = [
    RGBColor(200, 30, 30),
    RGBColor(30, 90, 200),
    RGBColor(30, 150, 60),
    RGBColor(150, 60, 180),
    RGBColor(230, 140, 20),
];

fn color_of(method: &str) -> RGBColor {
    SweepMethod::all()
        .iter()
        .position(|m| m.as_str() == method)
        .map_or(BLACK, |i| METHOD_COLORS[i])
}

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e}")
}

/// Padded `[lo, hi]` around the values, or `[0, 1]` if there are none.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo > hi {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    (lo - pad, hi + pad)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure!(
            dir.is_dir(),
            "output directory {} does not exist",
            dir.display()
        );
    }
    Ok(())
}

/// Mean reward gain against mean distance, one colour per method, each
/// method's front joined by a line. Every known method appears in the legend
/// even without points.
pub fn scatter(summary: &ParetoSummary, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (x0, x1) = span(summary.points.iter().map(|p| p.distance_mean));
    let (y0, y1) = span(summary.points.iter().map(|p| p.gain_mean));
    let mut chart = ChartBuilder::on(&root)
        .caption("reward gain vs endpoint distance", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("mean distance |x_edit - x_source|")
        .y_desc("mean reward gain")
        .draw()
        .map_err(err)?;
    for m in SweepMethod::all() {
        let c = color_of(m.as_str());
        let pts: Vec<(f64, f64)> = summary
            .points
            .iter()
            .filter(|p| p.method == m.as_str())
            .map(|p| (p.distance_mean, p.gain_mean))
            .collect();
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 4, c.filled())))
            .map_err(err)?
            .label(m.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], c.filled()));
        if let Some(front) = summary.fronts.get(m.as_str()) {
            let line: Vec<(f64, f64)> = front
                .iter()
                .map(|p| (p.distance_mean, p.gain_mean))
                .collect();
            chart
                .draw_series(LineSeries::new(line, c.stroke_width(2)))
                .map_err(err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.9))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

fn curve_panel(
    area: &DrawingArea<SVGBackend, Shift>,
    title: &str,
    series: &[Vec<(f64, f64)>],
) -> Result<()> {
    let (x0, x1) = span(series.iter().flatten().map(|p| p.0));
    let (y0, y1) = span(series.iter().flatten().map(|p| p.1));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .draw()
        .map_err(err)?;
    for (i, s) in series.iter().enumerate() {
        let c = METHOD_COLORS[i % METHOD_COLORS.len()];
        chart
            .draw_series(LineSeries::new(s.clone(), c.stroke_width(1)))
            .map_err(err)?;
    }
    Ok(())
}

/// Cost and `log10` PMP residual per iteration, one line per source (at most
/// ten). Fails if the report has no iteration records.
pub fn cost_curves(report: &RunReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let runs: Vec<_> = report
        .results
        .iter()
        .filter(|r| !r.iterations.is_empty())
        .take(10)
        .collect();
    ensure!(!runs.is_empty(), "report has no per-iteration records");
    let cost: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|r| {
            r.iterations
                .iter()
                .map(|it| (it.iteration as f64, it.cost))
                .collect()
        })
        .collect();
    let pmp: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|r| {
            r.iterations
                .iter()
                .map(|it| (it.iteration as f64, it.pmp_residual.max(1e-300).log10()))
                .collect()
        })
        .collect();
    let root = SVGBackend::new(path, (1000, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let panels = root.split_evenly((1, 2));
    curve_panel(&panels[0], "cost: energy - w r", &cost)?;
    curve_panel(&panels[1], "log10 PMP residual max|u + p|", &pmp)?;
    root.present().map_err(err)?;
    Ok(())
}

/// First two coordinates of the source trajectory (grey) and the optimized
/// trajectory (red), with both endpoints marked.
pub fn trajectory_overlay(initial: &Trajectory, edited: &Trajectory, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    ensure!(
        initial.dim() >= 2 && edited.dim() >= 2,
        "trajectory overlays need at least two dimensions"
    );
    let xy =
        |t: &Trajectory| -> Vec<(f64, f64)> { t.states.iter().map(|s| (s[0], s[1])).collect() };
    let (a, b) = (xy(initial), xy(edited));
    let (x0, x1) = span(a.iter().chain(&b).map(|p| p.0));
    let (y0, y1) = span(a.iter().chain(&b).map(|p| p.1));
    let root = SVGBackend::new(path, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("source path vs optimized path", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart.configure_mesh().draw().map_err(err)?;
    let grey = RGBColor(120, 120, 120);
    let red = METHOD_COLORS[0];
    chart
        .draw_series(LineSeries::new(a.clone(), grey.stroke_width(2)))
        .map_err(err)?
        .label("source")
        .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], grey.filled()));
    chart
        .draw_series(LineSeries::new(b.clone(), red.stroke_width(2)))
        .map_err(err)?
        .label("optimized")
        .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], red.filled()));
    let ends = [(a[a.len() - 1], grey), (b[b.len() - 1], red)];
    chart
        .draw_series(ends.iter().map(|&(p, c)| Circle::new(p, 5, c.filled())))
        .map_err(err)?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.9))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
