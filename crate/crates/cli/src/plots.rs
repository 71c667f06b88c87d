//! Static SVG charts of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use neurofield::experiment::{KernelDump, RunOutput};
use plotters::coord::Shift;
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 500);

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Time series on one chart, log scale when every series is positive.
fn lines(path: &Path, title: &str, x_desc: &str, t: &[f64], series: &[(&str, Vec<f64>)]) -> Result<(), String> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (x0, x1) = range(t.iter().copied());
    let all = || series.iter().flat_map(|(_, v)| v.iter().copied());
    let positive = all().all(|v| v > 0.0);
    let mut chart = ChartBuilder::on(&root);
    chart.caption(title, ("sans-serif", 20)).margin(10).x_label_area_size(35).y_label_area_size(60);
    let palette = |k: usize| Palette99::pick(k).to_rgba();
    if positive {
        let (lo, hi) = range(all());
        let lo = lo.max(hi * 1e-14);
        let mut c = chart.build_cartesian_2d(x0..x1, (lo..hi * 1.5).log_scale()).map_err(err)?;
        c.configure_mesh().x_desc(x_desc).draw().map_err(err)?;
        for (k, (name, v)) in series.iter().enumerate() {
            let col = palette(k);
            c.draw_series(LineSeries::new(t.iter().copied().zip(v.iter().map(|y| y.max(lo))), col))
                .map_err(err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], col));
        }
        c.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(err)?;
    } else {
        let (lo, hi) = range(all());
        let mut c = chart.build_cartesian_2d(x0..x1, lo..hi).map_err(err)?;
        c.configure_mesh().x_desc(x_desc).draw().map_err(err)?;
        for (k, (name, v)) in series.iter().enumerate() {
            let col = palette(k);
            c.draw_series(LineSeries::new(t.iter().copied().zip(v.iter().copied()), col))
                .map_err(err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], col));
        }
        c.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(err)?;
    }
    root.present().map_err(err)
}

/// Blue for negative, white for zero, red for positive, saturating at `scale`.
pub fn diverging(v: f64, scale: f64) -> RGBColor {
    let s = (v / scale).clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if s >= 0.0 {
        RGBColor(255, fade(s), fade(s))
    } else {
        RGBColor(fade(-s), fade(-s), 255)
    }
}

fn heatmap(area: &DrawingArea<SVGBackend<'_>, Shift>, k: &KernelDump, scale: f64) -> Result<(), String> {
    let title = match k.t {
        Some(t) => format!("{} at t = {t}", k.name),
        None => k.name.clone(),
    };
    let mut c = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0..k.cols, 0..k.rows)
        .map_err(err)?;
    c.configure_mesh().disable_mesh().x_desc("r'").y_desc("r").draw().map_err(err)?;
    c.draw_series((0..k.rows).flat_map(|r| {
        (0..k.cols).map(move |col| {
            let v = k.data[r * k.cols + col];
            Rectangle::new([(col, r), (col + 1, r + 1)], diverging(v, scale).filled())
        })
    }))
    .map_err(err)?;
    Ok(())
}

fn sweep(path: &Path, rows: &[(f64, f64, f64)]) -> Result<(), String> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (x0, x1) = range(rows.iter().map(|r| r.0));
    let (_, hi) = range(rows.iter().flat_map(|r| [r.1, r.2]));
    let mut c = ChartBuilder::on(&root)
        .caption("steady state against perturbation amplitude", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1 + 0.05 * (x1 - x0), 0.0..hi * 1.1)
        .map_err(err)?;
    c.configure_mesh().x_desc("amplitude").draw().map_err(err)?;
    c.draw_series(rows.iter().map(|r| Circle::new((r.0, r.1), 4, RED.filled())))
        .map_err(err)?
        .label("steady max")
        .legend(|(x, y)| Circle::new((x + 7, y), 4, RED.filled()));
    c.draw_series(rows.iter().map(|r| Cross::new((r.0, r.2), 5, BLUE.stroke_width(2))))
        .map_err(err)?
        .label("steady mean")
        .legend(|(x, y)| Cross::new((x + 7, y), 5, BLUE.stroke_width(2)));
    c.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(err)?;
    root.present().map_err(err)
}

fn file_name(k: &KernelDump) -> String {
    match k.t {
        Some(t) => format!("{}_t{t}.svg", k.name),
        None => format!("{}.svg", k.name),
    }
}

/// Writes `dir/plots/*.svg` for a run and its members. The CSV files behind
/// every chart are written by the artifact writer.
pub fn emit_plots(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>, String> {
    let pd = dir.join("plots");
    fs::create_dir_all(&pd).map_err(err)?;
    let mut files = Vec::new();
    let r = &out.report;
    if !r.times.is_empty() {
        let series: Vec<(&str, Vec<f64>)> = r
            .metric_names
            .iter()
            .map(|n| (n.as_str(), r.metric(n).unwrap_or_default()))
            .collect();
        let p = pd.join("norms.svg");
        lines(&p, &format!("{}: norms", r.name), "t", &r.times, &series)?;
        files.push(p);
    }
    if let Some(l) = &out.lyapunov {
        let p = pd.join("lyapunov.svg");
        lines(&p, &format!("{}: V", r.name), "t", &l.times, &[("V", l.value.clone())])?;
        files.push(p);
    }
    if let Some(pe) = &r.pe {
        let p = pd.join("pe.svg");
        lines(&p, &format!("{}: excitation level", r.name), "window start", &pe.starts, &[("kappa", pe.kappa.clone())])?;
        files.push(p);
    }
    // one colour scale for the true kernel and its estimates
    let w11: Vec<&KernelDump> = out.kernels.iter().filter(|k| k.name.starts_with("w11")).collect();
    let scale = w11
        .iter()
        .flat_map(|k| k.data.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for k in w11 {
        let p = pd.join(file_name(k));
        let root = SVGBackend::new(&p, (560, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        heatmap(&root, k, scale)?;
        root.present().map_err(err)?;
        drop(root);
        files.push(p);
    }
    if let Some(s) = &r.sweep {
        let p = pd.join("sweep.svg");
        let rows: Vec<(f64, f64, f64)> = s.rows.iter().map(|r| (r.amplitude, r.steady_max, r.steady_avg)).collect();
        sweep(&p, &rows)?;
        files.push(p);
    }
    for m in &out.runs {
        files.extend(emit_plots(&dir.join(&m.config.name), m)?);
    }
    Ok(files)
}
