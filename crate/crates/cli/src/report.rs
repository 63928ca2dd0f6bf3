//! SVG charts from experiment CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use cika::stats::log_log_slope;

const SIZE: (u32, u32) = (800, 500);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(rows)
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("drawing failed: {e:?}")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Named polylines on linear axes.
fn line_chart(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &BTreeMap<String, Vec<(f64, f64)>>,
) -> Result<()> {
    let (x0, x1) = bounds(series.values().flatten().map(|p| p.0));
    let (y0, y1) = bounds(series.values().flatten().map(|p| p.1));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[derive(Deserialize)]
struct CurvePoint {
    instance: String,
    policy: String,
    step: f64,
    mean_cumulative_regret: f64,
}

fn regret(dir: &Path, csv: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<CurvePoint> = read_rows(csv)?;
    let mut by_instance: BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in rows {
        by_instance
            .entry(r.instance)
            .or_default()
            .entry(r.policy)
            .or_default()
            .push((r.step, r.mean_cumulative_regret));
    }
    let mut out = Vec::new();
    for (instance, series) in by_instance {
        let path = dir.join(format!("regret_{instance}.svg"));
        line_chart(
            &path,
            &format!("Cumulative regret, {instance}"),
            "step",
            "mean cumulative regret",
            &series,
        )?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ConvergencePoint {
    m: f64,
    rmse: f64,
}

fn convergence(dir: &Path, csv: &Path) -> Result<PathBuf> {
    let rows: Vec<ConvergencePoint> = read_rows(csv)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.m).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    if rows.iter().any(|r| r.m <= 0.0 || r.rmse <= 0.0) {
        bail!("{}: log-log chart needs positive M and RMSE", csv.display());
    }
    let slope = log_log_slope(&xs, &ys);
    let path = dir.join("convergence.svg");
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(0.0, f64::max),
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(0.0, f64::max),
    );
    {
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let caption = match slope {
            Some(s) => format!("ICP RMSE against M (fitted slope {s:.3})"),
            None => "ICP RMSE against M".to_string(),
        };
        let mut chart = ChartBuilder::on(&root)
            .caption(caption, ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(
                (x0 * 0.8..x1 * 1.25).log_scale(),
                (y0 * 0.8..y1 * 1.25).log_scale(),
            )
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("M (trials per arm)")
            .y_desc("RMSE")
            .draw()
            .map_err(plot_err)?;
        let color = COLORS[0];
        chart
            .draw_series(LineSeries::new(
                xs.iter().copied().zip(ys.iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?;
        chart
            .draw_series(
                xs.iter()
                    .zip(&ys)
                    .map(|(&x, &y)| Circle::new((x, y), 4, color.filled())),
            )
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(path)
}

#[derive(Deserialize)]
struct DeltaPoint {
    delta: f64,
    m: f64,
    bias: f64,
}

fn delta(dir: &Path, csv: &Path) -> Result<PathBuf> {
    let rows: Vec<DeltaPoint> = read_rows(csv)?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        series
            .entry(format!("M={:>6}", r.m))
            .or_default()
            .push((r.delta, r.bias.abs()));
    }
    let path = dir.join("delta_decomposition.svg");
    line_chart(
        &path,
        "ICP bias against fidelity gap",
        "delta",
        "|mean e_hat - target|",
        &series,
    )?;
    Ok(path)
}

#[derive(Deserialize)]
struct ConfoundingPoint {
    w_d: f64,
    bias_obs: Option<f64>,
    bias_icp: f64,
}

fn confounding(dir: &Path, csv: &Path) -> Result<PathBuf> {
    let rows: Vec<ConfoundingPoint> = read_rows(csv)?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        if let Some(b) = r.bias_obs {
            series
                .entry("observational".into())
                .or_default()
                .push((r.w_d, b));
        }
        series
            .entry("interventional".into())
            .or_default()
            .push((r.w_d, r.bias_icp));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let path = dir.join("confounding.svg");
    line_chart(
        &path,
        "Estimator bias against confounding strength",
        "w_d",
        "bias",
        &series,
    )?;
    Ok(path)
}

#[derive(Deserialize)]
struct ChainPoint {
    n: f64,
    success_rate: f64,
}

fn chain(dir: &Path, csv: &Path) -> Result<PathBuf> {
    let rows: Vec<ChainPoint> = read_rows(csv)?;
    let mut series = BTreeMap::new();
    series.insert(
        "recovered".to_string(),
        rows.iter().map(|r| (r.n, r.success_rate)).collect(),
    );
    let path = dir.join("chain.svg");
    line_chart(
        &path,
        "Chain recovery rate",
        "chain length n",
        "success rate",
        &series,
    )?;
    Ok(path)
}

/// Renders every recognized CSV in `dir`; errors when there is none.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut out = Vec::new();
    let file = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    if let Some(p) = file("regret_curves.csv") {
        out.extend(regret(dir, &p)?);
    }
    if let Some(p) = file("convergence.csv") {
        out.push(convergence(dir, &p)?);
    }
    if let Some(p) = file("delta_decomposition.csv") {
        out.push(delta(dir, &p)?);
    }
    if let Some(p) = file("confounding.csv") {
        out.push(confounding(dir, &p)?);
    }
    if let Some(p) = file("chain.csv") {
        out.push(chain(dir, &p)?);
    }
    if out.is_empty() {
        bail!("no experiment CSVs found in {}", dir.display());
    }
    Ok(out)
}
