//! Learning-curve export: an SVG line chart and a tidy long-format CSV,
//! both read straight from `metrics.csv` files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crate::metrics::{columns, read_timing, MetricsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    EnvSteps,
    /// Minutes of wall-clock time.
    WallClock,
}

impl std::str::FromStr for XAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "env_steps" => Ok(XAxis::EnvSteps),
            "wall_clock" => Ok(XAxis::WallClock),
            other => bail!("unknown x axis `{other}` (expected env_steps or wall_clock)"),
        }
    }
}

pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Wall-clock seconds per row: the metrics column when filled, else `timing.csv`.
fn wall_clock(dir: &Path, table: &MetricsTable) -> Result<Vec<Option<f64>>> {
    let col = table.column("wall_clock_s")?;
    if col.iter().all(Option::is_some) {
        return Ok(col);
    }
    let timing = read_timing(&dir.join("timing.csv"))
        .with_context(|| format!("{}: wall-clock axis needs timing.csv", dir.display()))?;
    let steps = table.column("env_steps")?;
    Ok(steps
        .iter()
        .map(|s| s.and_then(|s| timing.iter().find(|(t, _)| *t as f64 == s).map(|(_, w)| *w)))
        .collect())
}

pub fn load_curves(run_dirs: &[PathBuf], metric: &str, x: XAxis) -> Result<Vec<Curve>> {
    if !columns().iter().any(|c| c == metric) {
        bail!("no metrics column `{metric}`");
    }
    let mut curves = Vec::new();
    for dir in run_dirs {
        let table = MetricsTable::read(&dir.join("metrics.csv"))?;
        let xs = match x {
            XAxis::EnvSteps => table.column("env_steps")?,
            XAxis::WallClock => wall_clock(dir, &table)?
                .into_iter()
                .map(|w| w.map(|s| s / 60.0))
                .collect(),
        };
        let ys = table.column(metric)?;
        let points = xs.into_iter().zip(ys).filter_map(|(x, y)| Some((x?, y?))).collect();
        curves.push(Curve {
            label: label_of(dir),
            points,
        });
    }
    Ok(curves)
}

/// Writes `<out>.svg` with `metric` against `x` and `<out>.csv` holding every
/// non-empty metrics value as `run,env_steps,column,value`.
pub fn export_curves(run_dirs: &[PathBuf], metric: &str, x: XAxis, out: &Path) -> Result<(PathBuf, PathBuf)> {
    if run_dirs.is_empty() {
        bail!("no run directories given");
    }
    let curves = load_curves(run_dirs, metric, x)?;
    let svg = out.with_extension("svg");
    let csv_path = out.with_extension("csv");
    write_long_csv(run_dirs, &csv_path)?;
    draw(&curves, metric, x, &svg)?;
    Ok((svg, csv_path))
}

fn write_long_csv(run_dirs: &[PathBuf], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "env_steps", "column", "value"])?;
    let cols = columns();
    for dir in run_dirs {
        let table = MetricsTable::read(&dir.join("metrics.csv"))?;
        let label = label_of(dir);
        for row in &table.rows {
            let steps = row.get("env_steps").map(|s| s.to_string()).unwrap_or_default();
            for (name, v) in cols.iter().zip(&row.values) {
                if let (Some(v), true) = (v, name != "env_steps") {
                    w.write_record([label.as_str(), steps.as_str(), name.as_str(), &v.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn draw(curves: &[Curve], metric: &str, x: XAxis, path: &Path) -> Result<()> {
    let all = curves.iter().flat_map(|c| c.points.iter());
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
    let pad = 0.05 * (y1 - y0);
    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_label = match x {
        XAxis::EnvSteps => "env steps",
        XAxis::WallClock => "wall clock (min)",
    };
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .caption(metric, ("sans-serif", 22))
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(metric)
        .draw()
        .map_err(plot_err)?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(c.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(c.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plotting failed: {e:?}")
}
