use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::ScenarioConfig;
use super::run::{scenario_layout, KernelDump, RunOutput};
use crate::delay::{write_snapshot, write_trajectory_csv, DelayError, SnapshotDims};
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Octave text matrix format.
pub fn write_mat<W: Write>(mut out: W, name: &str, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    writeln!(out, "# name: {name}\n# type: matrix\n# rows: {rows}\n# columns: {cols}")?;
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, " {}", line.join(" "))?;
    }
    Ok(())
}

fn kernel_file(k: &KernelDump) -> String {
    match k.t {
        None => format!("{}.mat", k.name),
        Some(t) => format!("{}_t{t}.mat", k.name),
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| Error::Io(e.to_string()))
}

/// Writes `config.toml`, `metrics.csv`, `trajectory.csv`, `report.json`,
/// `kernels/*.mat` and,
/// when present, `lyapunov.csv`, `pe.csv` and `sweep.csv` under `dir`.
/// Sweep members go to `dir/<member name>/`. Returns the files written.
pub fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let r = &out.report;
    let p = dir.join("config.toml");
    fs::write(&p, out.config.to_toml()?)?;
    files.push(p);
    if !r.times.is_empty() {
        let p = dir.join("metrics.csv");
        let mut header = vec!["t".to_string()];
        header.extend(r.metric_names.iter().cloned());
        write_csv(
            &p,
            &header,
            r.times.iter().zip(&r.metrics).map(|(t, m)| std::iter::once(*t).chain(m.iter().copied()).collect()),
        )?;
        files.push(p);
    }
    if !out.trajectory.states.is_empty() {
        let p = dir.join("trajectory.csv");
        write_trajectory_csv(&out.trajectory, BufWriter::new(fs::File::create(&p)?))?;
        files.push(p);
    }
    let p = dir.join("report.json");
    json(&p, r)?;
    files.push(p);
    if !out.kernels.is_empty() {
        let kd = dir.join("kernels");
        fs::create_dir_all(&kd)?;
        for k in &out.kernels {
            let p = kd.join(kernel_file(k));
            write_mat(BufWriter::new(fs::File::create(&p)?), &k.name, k.rows, k.cols, &k.data)?;
            files.push(p);
        }
    }
    if let Some(l) = &out.lyapunov {
        let p = dir.join("lyapunov.csv");
        let header = ["t", "v", "dvdt", "bound", "tolerance"].map(String::from);
        // interval quantities are reported at the right end, zero at t = 0
        let rows = (0..l.times.len()).map(|k| {
            let (d, b, tol) = match k.checked_sub(1) {
                Some(i) => (l.dvdt[i], l.bound[i], l.tolerance[i]),
                None => (0.0, 0.0, 0.0),
            };
            vec![l.times[k], l.value[k], d, b, tol]
        });
        write_csv(&p, &header, rows)?;
        files.push(p);
    }
    if let Some(pe) = &r.pe {
        let p = dir.join("pe.csv");
        write_csv(
            &p,
            &["start".into(), "kappa".into()],
            pe.starts.iter().zip(&pe.kappa).map(|(s, k)| vec![*s, *k]),
        )?;
        files.push(p);
    }
    if let Some(s) = &r.sweep {
        let p = dir.join("sweep.csv");
        let header = ["amplitude", "steady_max", "steady_avg", "oscillating"].map(String::from);
        write_csv(
            &p,
            &header,
            s.rows.iter().map(|row| vec![row.amplitude, row.steady_max, row.steady_avg, row.oscillating as u8 as f64]),
        )?;
        files.push(p);
    }
    for m in &out.runs {
        files.extend(write_artifacts(&dir.join(&m.config.name), m)?);
    }
    Ok(files)
}

/// Config echo, the error text and, for numerical aborts, the last valid
/// state as a binary snapshot.
pub fn write_diagnostic_bundle(dir: &Path, cfg: &ScenarioConfig, err: &Error) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let p = dir.join("config.toml");
    fs::write(&p, cfg.to_toml()?)?;
    files.push(p);
    let p = dir.join("error.txt");
    fs::write(&p, format!("{err}\n"))?;
    files.push(p);
    if let Error::Delay(DelayError::NonFinite { snapshot, .. }) = err {
        let params = cfg.build_params()?;
        let dims = SnapshotDims {
            n_points: params.n_points(),
            n1: params.dims[0],
            n2: params.dims[1],
        };
        let layout = scenario_layout(cfg)?;
        let p = dir.join("last_state.bin");
        write_snapshot(BufWriter::new(fs::File::create(&p)?), dims, &layout, snapshot)?;
        files.push(p);
    }
    Ok(files)
}
