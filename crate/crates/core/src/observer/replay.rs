//! Offline observer fed by logged measurements of `z1`.

use std::io::Read;
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::rhs::{observer_rhs, ObserverInputs, ObserverRates, ObserverSlices};
use super::system::flat_hs;
use crate::delay::{
    integrate, read_trajectory_csv, DelayError, DelaySystem, FieldHistory, HistoryBuffer, IntegrateOptions, Interp,
    ModelParams, Past, SharedInput, SimState, StateLayout, Trajectory,
};
use crate::field::{weighted_l2_norm, KernelField};
use crate::{Error, Result};

const CHUNK: u64 = 64;

/// One sample of the measured population.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub z1: Vec<f64>,
}

/// Measured `z1` samples in time order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementLog {
    pub samples: Vec<Measurement>,
}

impl MeasurementLog {
    /// Takes the recorded `z1` component of a trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let z1 = traj
            .recorded_component("z1")
            .ok_or_else(|| Error::Config("trajectory has no recorded z1 columns".into()))?;
        Ok(Self {
            samples: traj
                .times
                .iter()
                .zip(z1)
                .map(|(t, v)| Measurement { t: *t, z1: v.to_vec() })
                .collect(),
        })
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        Self::from_trajectory(&read_trajectory_csv(input)?)
    }
}

/// Perturbation applied to each measurement before the observer sees it.
pub type NoiseHook = Box<dyn FnMut(f64, &mut [f64]) + Send>;

/// Streams the log through a channel from a producer thread, in order.
pub fn spawn_measurement_feed(log: MeasurementLog, mut noise: Option<NoiseHook>) -> (Receiver<Measurement>, JoinHandle<()>) {
    let (tx, rx) = mpsc::sync_channel(256);
    let handle = std::thread::spawn(move || {
        for mut m in log.samples {
            if let Some(f) = noise.as_mut() {
                f(m.t, &mut m.z1);
            }
            if tx.send(m).is_err() {
                break;
            }
        }
    });
    (rx, handle)
}

struct BufferView<'a> {
    buf: &'a HistoryBuffer,
    n: usize,
    dim: usize,
}

impl FieldHistory for BufferView<'_> {
    fn n_points(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field_at(&self, t: f64, out: &mut [f64]) -> Result<(), DelayError> {
        self.buf.interpolate_into(t, 0..self.n * self.dim, out)
    }
    fn point_at(&self, t: f64, point: usize, out: &mut [f64]) -> Result<(), DelayError> {
        self.buf.interpolate_into(t, point * self.dim..(point + 1) * self.dim, out)
    }
}

/// The observer alone; `z1` comes from a growing measurement buffer.
pub struct ReplayObserver {
    pub params: ModelParams,
    pub inputs: [SharedInput; 2],
    measured: Mutex<HistoryBuffer>,
    layout: StateLayout,
}

impl ReplayObserver {
    pub fn new(params: ModelParams, inputs: [SharedInput; 2], dt: f64) -> Result<Self> {
        params.validate()?;
        let n = params.n_points();
        let [n1, n2] = params.dims;
        let layout = StateLayout::builder()
            .field("zhat2", n, n2, true)
            .field("zhat1", n, n1, false)
            .kernel("what11", n, n1, params.coupling(0, 0).kernel.col_dim())
            .kernel("what12", n, n1, params.coupling(0, 1).kernel.col_dim())
            .build();
        // measurements run ahead of the integration by up to one chunk
        let horizon = params.max_delay() + (CHUNK + 4) as f64 * dt;
        Ok(Self {
            measured: Mutex::new(HistoryBuffer::new(n * n1, horizon, Interp::Linear)),
            params,
            inputs,
            layout,
        })
    }

    /// Appends a measurement; the first one also fills the history before it.
    pub fn push_measurement(&self, m: &Measurement) -> Result<()> {
        let mut buf = self.measured.lock().expect("measurement buffer poisoned");
        if m.z1.len() != buf.width() {
            return Err(Error::Config(format!(
                "measurement has {} values, expected {}",
                m.z1.len(),
                buf.width()
            )));
        }
        let zero = vec![0.0; m.z1.len()];
        if buf.is_empty() {
            let h = buf.horizon();
            *buf = HistoryBuffer::constant(&m.z1, m.t, h, h.max(1e-3), Interp::Linear);
            return Ok(());
        }
        buf.push(m.t, &m.z1, &zero)?;
        Ok(())
    }

    pub fn latest_measurement(&self) -> Option<f64> {
        self.measured.lock().expect("measurement buffer poisoned").last_time()
    }

    /// Initial observer state: `zhat1 = z1(t0)` when known, `zhat2 = 0`, `what = 0`.
    pub fn initial_state(&self, zhat1: Option<&[f64]>) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        if let Some(z) = zhat1 {
            y[self.layout.component("zhat1").range()].copy_from_slice(z);
        }
        y
    }
}

impl DelaySystem for ReplayObserver {
    fn layout(&self) -> &StateLayout {
        &self.layout
    }

    fn max_delay(&self) -> f64 {
        self.params.max_delay()
    }

    fn min_delay(&self) -> f64 {
        self.params.min_delay()
    }

    fn rhs(&self, t: f64, y: &[f64], past: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
        let p = &self.params;
        let n = p.n_points();
        let [n1, n2] = p.dims;
        let l = &self.layout;
        let buf = self.measured.lock().expect("measurement buffer poisoned");
        let measured = BufferView { buf: &buf, n, dim: n1 };
        let mut z1 = vec![0.0; n * n1];
        measured.field_at(t, &mut z1)?;
        let hh2 = past.field(l.component("zhat2").offset, n, n2);
        let mut u1 = vec![0.0; n * n1];
        let mut u2 = vec![0.0; n * n2];
        self.inputs[0].eval_into(t, &mut u1);
        self.inputs[1].eval_into(t, &mut u2);
        let [dzh1, dzh2, dw11, dw12] = l.split_mut(dy, ["zhat1", "zhat2", "what11", "what12"]);
        observer_rhs(
            p,
            t,
            &ObserverSlices {
                zhat1: l.slice(y, "zhat1"),
                zhat2: l.slice(y, "zhat2"),
                what11: l.slice(y, "what11"),
                what12: l.slice(y, "what12"),
            },
            &ObserverInputs {
                z1: &z1,
                z1_past: &measured,
                zhat2_past: &hh2,
                u1: &u1,
                u2: &u2,
            },
            ObserverRates {
                zhat1: dzh1,
                zhat2: dzh2,
                what11: dw11,
                what12: dw12,
            },
        )
    }

    fn metric_names(&self) -> Vec<String> {
        ["innovation", "norm_zhat2", "err_w11", "err_w12"].map(String::from).to_vec()
    }

    fn metrics(&self, t: f64, y: &[f64], _past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let p = &self.params;
        let g = &p.grid;
        let l = &self.layout;
        let buf = self.measured.lock().expect("measurement buffer poisoned");
        let mut z1 = vec![0.0; l.component("zhat1").len()];
        buf.interpolate_into(t, 0..z1.len(), &mut z1)?;
        let e: Vec<f64> = l.slice(y, "zhat1").iter().zip(&z1).map(|(a, b)| a - b).collect();
        out.push(weighted_l2_norm(&e, p.dims[0], g));
        out.push(weighted_l2_norm(l.slice(y, "zhat2"), p.dims[1], g));
        for (name, (i, j)) in [("what11", (0, 0)), ("what12", (0, 1))] {
            let d: Vec<f64> = l
                .slice(y, name)
                .iter()
                .zip(p.coupling(i, j).kernel.data())
                .map(|(a, b)| a - b)
                .collect();
            out.push(flat_hs(&d, p));
        }
        Ok(())
    }
}

pub struct ReplayOutput {
    pub trajectory: Trajectory,
    pub state: SimState,
    pub what11: KernelField,
    pub what12: KernelField,
}

/// Runs the observer as measurements arrive; consumption stops when the
/// sender hangs up. Times must be strictly increasing and spaced by `dt`.
pub fn replay_observer(
    params: ModelParams,
    inputs: [SharedInput; 2],
    feed: Receiver<Measurement>,
    dt: f64,
    stride: usize,
) -> Result<ReplayOutput> {
    let sys = Arc::new(ReplayObserver::new(params, inputs, dt)?);
    let first = feed
        .recv()
        .map_err(|_| Error::Config("measurement feed is empty".into()))?;
    sys.push_measurement(&first)?;
    let y0 = sys.initial_state(Some(&first.z1));
    let mut state = SimState::with_constant_history(sys.as_ref(), first.t, y0, dt, Interp::CubicHermite)?;
    let mut traj = Trajectory::default();
    let mut last_t = first.t;
    let mut pending = false;
    loop {
        let msg = feed.recv();
        let done = msg.is_err();
        if let Ok(m) = msg {
            if m.t <= last_t {
                return Err(Error::Config(format!("measurement at {} arrived after {}", m.t, last_t)));
            }
            let gap = m.t - last_t;
            if (gap - dt).abs() > 1e-9 * (1.0 + m.t.abs()) {
                return Err(Error::Config(format!(
                    "measurement spacing {gap} differs from the observer step {dt}"
                )));
            }
            last_t = m.t;
            sys.push_measurement(&m)?;
            pending = true;
        }
        // integrate in chunks to amortize setup
        let steps_ready = ((last_t - state.t()) / dt).round() as u64;
        if pending && (done || steps_ready >= CHUNK) {
            let opts = IntegrateOptions {
                t_end: last_t,
                stride,
                record_final: done,
                ..Default::default()
            };
            let chunk = integrate(sys.as_ref(), &mut state, &opts, &mut [])?;
            traj.extend(chunk);
            pending = false;
        }
        if done {
            break;
        }
    }
    let l = sys.layout();
    let n = sys.params.n_points();
    let n1 = sys.params.dims[0];
    let what11 = KernelField::new(
        n,
        n1,
        sys.params.coupling(0, 0).kernel.col_dim(),
        l.slice(&state.y, "what11").to_vec(),
    )?;
    let what12 = KernelField::new(
        n,
        n1,
        sys.params.coupling(0, 1).kernel.col_dim(),
        l.slice(&state.y, "what12").to_vec(),
    )?;
    Ok(ReplayOutput {
        trajectory: traj,
        state,
        what11,
        what12,
    })
}
