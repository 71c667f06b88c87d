//! Trajectory CSV and the binary resume snapshot.
//!
//! Snapshot layout, all little-endian:
//!
//! ```text
//! magic "NFLD" | version u32 | N u64 | n1 u64 | n2 u64 | dt f64 | t0 f64 | step u64
//! layout: count u64, then per component
//!     name (u64 length + utf-8) | kind u8 (0 field, 1 kernel) | a u64 | b u64 | c u64 | delayed u8
//! y: u64 length + f64 values
//! history: width u64 | horizon f64 | interp u8 | count u64, then per sample t f64 + 3 x width f64
//! fsal: u8 flag, then u64 length + f64 values when set
//! ```

use std::io::{Read, Write};

use super::history::{HistoryBuffer, Interp, Sample};
use super::integrate::{ComponentShape, LayoutBuilder, SimState, StateLayout, Trajectory};
use super::DelayError;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"NFLD";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes `t, step_error, metrics..., component[k]...` with one row per record.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), DelayError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "step_error".to_string()];
    header.extend(traj.metric_names.iter().cloned());
    for (name, len) in &traj.recorded {
        header.extend((0..*len).map(|k| format!("{name}[{k}]")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (row, &t) in traj.times.iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(fmt(t));
        rec.push(fmt(traj.step_error.get(row).copied().unwrap_or(0.0)));
        rec.extend(traj.metrics[row].iter().map(|v| fmt(*v)));
        rec.extend(traj.states.get(row).into_iter().flatten().map(|v| fmt(*v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

// shortest representation that parses back to the same bits
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> DelayError {
    DelayError::Format(e.to_string())
}

/// Inverse of [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory, DelayError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(DelayError::Format("first column must be t".into()));
    }
    let err_col = header.iter().position(|h| h == "step_error");
    let mut metric_cols = Vec::new();
    let mut traj = Trajectory::default();
    let mut state_cols = Vec::new();
    for (k, h) in header.iter().enumerate().skip(1) {
        if Some(k) == err_col {
            continue;
        }
        match h.split_once('[') {
            Some((name, _)) => {
                state_cols.push(k);
                match traj.recorded.last_mut() {
                    Some((last, len)) if last == name => *len += 1,
                    _ => traj.recorded.push((name.to_string(), 1)),
                }
            }
            None => {
                metric_cols.push(k);
                traj.metric_names.push(h.clone());
            }
        }
    }
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let val = |k: usize| -> Result<f64, DelayError> {
            rec.get(k)
                .ok_or_else(|| DelayError::Format(format!("missing column {k}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| DelayError::Format(format!("column {}: {e}", header[k])))
        };
        traj.times.push(val(0)?);
        traj.step_error.push(match err_col {
            Some(k) => val(k)?,
            None => 0.0,
        });
        traj.metrics.push(metric_cols.iter().map(|&k| val(k)).collect::<Result<_, _>>()?);
        traj.states.push(state_cols.iter().map(|&k| val(k)).collect::<Result<_, _>>()?);
    }
    Ok(traj)
}

/// Grid and population sizes stored in the snapshot header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotDims {
    pub n_points: usize,
    pub n1: usize,
    pub n2: usize,
}

struct Enc<W: Write>(W);

impl<W: Write> Enc<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }
    fn vec(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.u64(v.len() as u64)?;
        self.f64s(v)
    }
}

struct Dec<R: Read>(R);

impl<R: Read> Dec<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K], DelayError> {
        let mut b = [0u8; K];
        self.0
            .read_exact(&mut b)
            .map_err(|e| DelayError::Format(format!("truncated snapshot: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, DelayError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, DelayError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, DelayError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize, DelayError> {
        let v = self.u64()?;
        if v > 1 << 40 {
            return Err(DelayError::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64, DelayError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DelayError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec(&mut self) -> Result<Vec<f64>, DelayError> {
        let n = self.len()?;
        self.f64s(n)
    }
}

pub fn write_snapshot<W: Write>(
    out: W,
    dims: SnapshotDims,
    layout: &StateLayout,
    state: &SimState,
) -> Result<(), DelayError> {
    let mut e = Enc(out);
    e.0.write_all(SNAPSHOT_MAGIC)?;
    e.u32(SNAPSHOT_VERSION)?;
    e.u64(dims.n_points as u64)?;
    e.u64(dims.n1 as u64)?;
    e.u64(dims.n2 as u64)?;
    e.f64(state.dt)?;
    e.f64(state.t0)?;
    e.u64(state.step)?;
    e.u64(layout.components().len() as u64)?;
    for c in layout.components() {
        e.u64(c.name.len() as u64)?;
        e.0.write_all(c.name.as_bytes())?;
        let (kind, a, b, cc) = match c.shape {
            ComponentShape::Field { n_points, dim } => (0, n_points, dim, 0),
            ComponentShape::Kernel { n_points, rows, cols } => (1, n_points, rows, cols),
        };
        e.u8(kind)?;
        e.u64(a as u64)?;
        e.u64(b as u64)?;
        e.u64(cc as u64)?;
        e.u8(c.delayed as u8)?;
    }
    e.vec(&state.y)?;
    let h = &state.history;
    e.u64(h.width() as u64)?;
    e.f64(h.horizon())?;
    e.u8(match h.interp() {
        Interp::Linear => 0,
        Interp::CubicHermite => 1,
    })?;
    e.u64(h.len() as u64)?;
    for s in h.samples() {
        e.f64(s.t)?;
        e.f64s(&s.y)?;
        e.f64s(&s.left)?;
        e.f64s(&s.right)?;
    }
    match &state.fsal {
        Some(k) => {
            e.u8(1)?;
            e.vec(k)?;
        }
        None => e.u8(0)?,
    }
    e.0.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(input: R) -> Result<(SnapshotDims, StateLayout, SimState), DelayError> {
    let mut d = Dec(input);
    if &d.bytes::<4>()? != SNAPSHOT_MAGIC {
        return Err(DelayError::Format("not a snapshot file".into()));
    }
    let version = d.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(DelayError::Format(format!("unsupported snapshot version {version}")));
    }
    let dims = SnapshotDims {
        n_points: d.len()?,
        n1: d.len()?,
        n2: d.len()?,
    };
    let dt = d.f64()?;
    let t0 = d.f64()?;
    let step = d.u64()?;
    let count = d.len()?;
    let mut builder = LayoutBuilder::default();
    for _ in 0..count {
        let len = d.len()?;
        let mut name = vec![0u8; len];
        d.0.read_exact(&mut name)
            .map_err(|e| DelayError::Format(format!("truncated snapshot: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| DelayError::Format(e.to_string()))?;
        let kind = d.u8()?;
        let (a, b, c) = (d.len()?, d.len()?, d.len()?);
        let delayed = d.u8()? != 0;
        builder = match kind {
            0 => builder.field(&name, a, b, delayed),
            1 => builder.kernel(&name, a, b, c),
            k => return Err(DelayError::Format(format!("unknown component kind {k}"))),
        };
    }
    // components are stored in layout order, so rebuilding reproduces offsets
    let layout = builder.build();
    let y = d.vec()?;
    if y.len() != layout.len() {
        return Err(DelayError::Format("state length does not match layout".into()));
    }
    let width = d.len()?;
    let horizon = d.f64()?;
    let interp = match d.u8()? {
        0 => Interp::Linear,
        1 => Interp::CubicHermite,
        k => return Err(DelayError::Format(format!("unknown interpolation {k}"))),
    };
    let n_samples = d.len()?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        samples.push(Sample {
            t: d.f64()?,
            y: d.f64s(width)?,
            left: d.f64s(width)?,
            right: d.f64s(width)?,
        });
    }
    let fsal = match d.u8()? {
        0 => None,
        _ => Some(d.vec()?),
    };
    let state = SimState {
        t0,
        step,
        dt,
        y,
        history: HistoryBuffer::from_samples(width, horizon, interp, samples),
        fsal,
    };
    Ok((dims, layout, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{integrate, DelaySystem, IntegrateOptions, ModelParams, PlantSystem};
    use crate::field::{build_grid, MeasureKind};

    fn plant() -> PlantSystem {
        let grid = build_grid(5, MeasureKind::Lebesgue).unwrap();
        PlantSystem::unforced(ModelParams::table1(grid).unwrap()).unwrap()
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let sys = plant();
        let mut st = SimState::with_constant_history(&sys, 0.0, sys.constant_state(1.0, 0.3), 1e-2, Interp::CubicHermite)
            .unwrap();
        let opts = IntegrateOptions {
            t_end: 0.5,
            stride: 5,
            record: vec!["z1".into()],
            ..Default::default()
        };
        let traj = integrate(&sys, &mut st, &opts, &mut []).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.metrics, traj.metrics);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.recorded, traj.recorded);
        assert_eq!(back.metric_names, traj.metric_names);
    }

    #[test]
    fn snapshot_resume_reproduces_the_run() {
        let sys = plant();
        let y0 = sys.constant_state(1.0, 1.0);
        let opts = IntegrateOptions {
            t_end: 0.6,
            ..Default::default()
        };
        let mut whole = SimState::with_constant_history(&sys, 0.0, y0.clone(), 1e-2, Interp::CubicHermite).unwrap();
        integrate(&sys, &mut whole, &opts, &mut []).unwrap();

        let mut part = SimState::with_constant_history(&sys, 0.0, y0, 1e-2, Interp::CubicHermite).unwrap();
        integrate(&sys, &mut part, &IntegrateOptions { t_end: 0.25, ..opts.clone() }, &mut []).unwrap();
        let dims = SnapshotDims {
            n_points: 5,
            n1: 1,
            n2: 1,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, dims, sys.layout(), &part).unwrap();
        assert_eq!(&buf[..4], SNAPSHOT_MAGIC);
        let (d2, layout, mut resumed) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(d2, dims);
        assert_eq!(&layout, sys.layout());
        assert_eq!(resumed, part);
        integrate(&sys, &mut resumed, &opts, &mut []).unwrap();
        assert_eq!(resumed.y, whole.y);
    }

    #[test]
    fn corrupt_snapshot_is_rejected() {
        assert!(matches!(read_snapshot(&b"XXXX"[..]), Err(DelayError::Format(_))));
        assert!(matches!(read_snapshot(&b"NFLD\x01"[..]), Err(DelayError::Format(_))));
    }
}
