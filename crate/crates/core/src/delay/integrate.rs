use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::history::{HistoryBuffer, Interp};
use super::DelayError;

/// Shape of one named block of the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentShape {
    Field { n_points: usize, dim: usize },
    Kernel { n_points: usize, rows: usize, cols: usize },
}

impl ComponentShape {
    pub fn len(&self) -> usize {
        match *self {
            Self::Field { n_points, dim } => n_points * dim,
            Self::Kernel { n_points, rows, cols } => n_points * n_points * rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub offset: usize,
    pub shape: ComponentShape,
    pub delayed: bool,
}

impl Component {
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named layout of a coupled system's flat state. Components whose past is
/// queried are placed first so the history only stores that prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    components: Vec<Component>,
    total: usize,
    history_width: usize,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    entries: Vec<(String, ComponentShape, bool)>,
}

impl LayoutBuilder {
    pub fn field(mut self, name: &str, n_points: usize, dim: usize, delayed: bool) -> Self {
        self.entries
            .push((name.to_string(), ComponentShape::Field { n_points, dim }, delayed));
        self
    }

    pub fn kernel(mut self, name: &str, n_points: usize, rows: usize, cols: usize) -> Self {
        self.entries
            .push((name.to_string(), ComponentShape::Kernel { n_points, rows, cols }, false));
        self
    }

    pub fn build(self) -> StateLayout {
        let mut components = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for pass_delayed in [true, false] {
            for (name, shape, delayed) in &self.entries {
                if *delayed == pass_delayed {
                    components.push(Component {
                        name: name.clone(),
                        offset,
                        shape: *shape,
                        delayed: *delayed,
                    });
                    offset += shape.len();
                }
            }
        }
        let history_width = components.iter().filter(|c| c.delayed).map(|c| c.len()).sum();
        StateLayout {
            components,
            total: offset,
            history_width,
        }
    }
}

impl StateLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn history_width(&self) -> usize {
        self.history_width
    }

    pub fn get(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Panics on unknown names; layouts are fixed by each system's code.
    pub fn component(&self, name: &str) -> &Component {
        self.get(name)
            .unwrap_or_else(|| panic!("state layout has no component named {name}"))
    }

    pub fn slice<'a>(&self, y: &'a [f64], name: &str) -> &'a [f64] {
        &y[self.component(name).range()]
    }

    /// Disjoint mutable slices of the named components, in the order asked.
    pub fn split_mut<'a, const K: usize>(&self, y: &'a mut [f64], names: [&str; K]) -> [&'a mut [f64]; K] {
        let mut order: Vec<(usize, std::ops::Range<usize>)> =
            names.iter().enumerate().map(|(k, n)| (k, self.component(n).range())).collect();
        order.sort_by_key(|(_, r)| r.start);
        let mut out: [Option<&'a mut [f64]>; K] = std::array::from_fn(|_| None);
        let mut rest = y;
        let mut consumed = 0;
        for (k, r) in order {
            assert!(r.start >= consumed, "component listed twice");
            let tail = std::mem::take(&mut rest);
            let (_, tail) = tail.split_at_mut(r.start - consumed);
            let (mine, tail) = tail.split_at_mut(r.len());
            out[k] = Some(mine);
            rest = tail;
            consumed = r.end;
        }
        out.map(|s| s.expect("every name produces a slice"))
    }

    pub fn component_at(&self, flat: usize) -> Option<&Component> {
        self.components.iter().find(|c| c.range().contains(&flat))
    }
}

/// Access to the past of the state while evaluating a right-hand side at
/// stage time `t` with stage value `y`.
///
/// Queries at or before the newest stored sample interpolate the history.
/// Queries inside the current step (small or zero delays) interpolate
/// linearly between the newest sample and the stage value.
pub struct Past<'a> {
    history: &'a HistoryBuffer,
    t: f64,
    y: &'a [f64],
}

impl<'a> Past<'a> {
    pub fn new(history: &'a HistoryBuffer, t: f64, y: &'a [f64]) -> Self {
        Self { history, t, y }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn current(&self) -> &'a [f64] {
        self.y
    }

    pub fn history(&self) -> &'a HistoryBuffer {
        self.history
    }

    pub fn fill(&self, t_query: f64, range: std::ops::Range<usize>, out: &mut [f64]) -> Result<(), DelayError> {
        let tol = 1e-12 * (1.0 + self.t.abs());
        if t_query >= self.t - tol {
            out.copy_from_slice(&self.y[range]);
            return Ok(());
        }
        let last = self.history.last_time().unwrap_or(f64::NEG_INFINITY);
        if t_query > last + tol {
            let base = self.history.last_values().expect("non-empty history");
            let theta = (t_query - last) / (self.t - last);
            for (o, i) in out.iter_mut().zip(range) {
                *o = (1.0 - theta) * base[i] + theta * self.y[i];
            }
            return Ok(());
        }
        self.history.interpolate_into(t_query, range, out)
    }

    /// View on a field component stored at `offset`.
    pub fn field(&'a self, offset: usize, n_points: usize, dim: usize) -> ComponentView<'a> {
        ComponentView {
            past: self,
            offset,
            n_points,
            dim,
        }
    }
}

/// Anything that can return a field's value at a past time.
pub trait FieldHistory {
    fn n_points(&self) -> usize;
    fn dim(&self) -> usize;
    /// Whole field at time `t` (point-major, `n_points * dim`).
    fn field_at(&self, t: f64, out: &mut [f64]) -> Result<(), DelayError>;
    /// The `dim` values of one point at time `t`.
    fn point_at(&self, t: f64, point: usize, out: &mut [f64]) -> Result<(), DelayError>;
}

pub struct ComponentView<'a> {
    past: &'a Past<'a>,
    offset: usize,
    n_points: usize,
    dim: usize,
}

impl FieldHistory for ComponentView<'_> {
    fn n_points(&self) -> usize {
        self.n_points
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn field_at(&self, t: f64, out: &mut [f64]) -> Result<(), DelayError> {
        self.past
            .fill(t, self.offset..self.offset + self.n_points * self.dim, out)
    }

    fn point_at(&self, t: f64, point: usize, out: &mut [f64]) -> Result<(), DelayError> {
        let start = self.offset + point * self.dim;
        self.past.fill(t, start..start + self.dim, out)
    }
}

/// Pointwise sum of two histories, e.g. `zhat2 = z2 + ztilde2`.
pub struct SumView<'a> {
    pub a: &'a dyn FieldHistory,
    pub b: &'a dyn FieldHistory,
}

impl FieldHistory for SumView<'_> {
    fn n_points(&self) -> usize {
        self.a.n_points()
    }

    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn field_at(&self, t: f64, out: &mut [f64]) -> Result<(), DelayError> {
        let mut tmp = vec![0.0; out.len()];
        self.a.field_at(t, out)?;
        self.b.field_at(t, &mut tmp)?;
        for (o, v) in out.iter_mut().zip(tmp) {
            *o += v;
        }
        Ok(())
    }

    fn point_at(&self, t: f64, point: usize, out: &mut [f64]) -> Result<(), DelayError> {
        let mut tmp = vec![0.0; out.len()];
        self.a.point_at(t, point, out)?;
        self.b.point_at(t, point, &mut tmp)?;
        for (o, v) in out.iter_mut().zip(tmp) {
            *o += v;
        }
        Ok(())
    }
}

/// A delay differential system on a flat state.
pub trait DelaySystem {
    fn layout(&self) -> &StateLayout;

    /// Largest delay appearing in the right-hand side.
    fn max_delay(&self) -> f64;

    /// Smallest strictly positive delay (`max_delay` when all are equal).
    fn min_delay(&self) -> f64 {
        self.max_delay()
    }

    fn rhs(&self, t: f64, y: &[f64], past: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError>;

    fn metric_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Scalar diagnostics recorded with the trajectory.
    fn metrics(&self, _t: f64, _y: &[f64], _past: &Past<'_>, _out: &mut Vec<f64>) -> Result<(), DelayError> {
        Ok(())
    }
}

/// Callback run at the initial time and after every accepted step.
pub trait StepObserver {
    fn observe(&mut self, t: f64, y: &[f64], history: &HistoryBuffer) -> Result<(), DelayError>;
}

/// Full integrator state; cloning it lets a run be resumed later.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t0: f64,
    pub step: u64,
    pub dt: f64,
    pub y: Vec<f64>,
    pub history: HistoryBuffer,
    /// Right-hand side at the current state, if already known.
    pub fsal: Option<Vec<f64>>,
}

impl SimState {
    /// Initial history held constant at the delayed prefix of `y0`.
    pub fn with_constant_history(
        system: &dyn DelaySystem,
        t0: f64,
        y0: Vec<f64>,
        dt: f64,
        interp: Interp,
    ) -> Result<Self, DelayError> {
        let layout = system.layout();
        check_len(layout, &y0)?;
        let width = layout.history_width();
        let history = HistoryBuffer::constant(&y0[..width], t0, system.max_delay(), dt, interp);
        Ok(Self {
            t0,
            step: 0,
            dt,
            y: y0,
            history,
            fsal: None,
        })
    }

    /// Initial history given by `f(t, prefix)` on `[t0 - max_delay, t0]`.
    pub fn with_history_fn(
        system: &dyn DelaySystem,
        t0: f64,
        y0: Vec<f64>,
        dt: f64,
        interp: Interp,
        f: impl Fn(f64, &mut [f64]),
        df: Option<&dyn Fn(f64, &mut [f64])>,
    ) -> Result<Self, DelayError> {
        let layout = system.layout();
        check_len(layout, &y0)?;
        let width = layout.history_width();
        let history = HistoryBuffer::from_fn(width, t0, system.max_delay(), dt, interp, f, df);
        Ok(Self {
            t0,
            step: 0,
            dt,
            y: y0,
            history,
            fsal: None,
        })
    }

    pub fn t(&self) -> f64 {
        self.t0 + self.step as f64 * self.dt
    }
}

fn check_len(layout: &StateLayout, y: &[f64]) -> Result<(), DelayError> {
    if y.len() != layout.len() {
        return Err(DelayError::Config(format!(
            "state has {} entries, layout expects {}",
            y.len(),
            layout.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateOptions {
    pub t_end: f64,
    /// Record every `stride` steps.
    pub stride: usize,
    /// Components copied into the trajectory at every record.
    pub record: Vec<String>,
    /// Times at which the full state is kept.
    pub snapshot_times: Vec<f64>,
    /// Also record the last step when it is off the stride.
    pub record_final: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            stride: 1,
            record: Vec::new(),
            snapshot_times: Vec::new(),
            record_final: true,
        }
    }
}

/// Output of [`integrate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub metric_names: Vec<String>,
    /// One row per recorded time.
    pub metrics: Vec<Vec<f64>>,
    /// `(name, length)` of every recorded component, in order.
    pub recorded: Vec<(String, usize)>,
    /// One row per recorded time, recorded components concatenated.
    pub states: Vec<Vec<f64>>,
    /// Largest max-norm of the embedded 2nd/3rd order difference since the
    /// previous record.
    pub step_error: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    pub fn metric(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.metric_names.iter().position(|n| n == name)?;
        Some(self.metrics.iter().map(|row| row[j]).collect())
    }

    pub fn recorded_component(&self, name: &str) -> Option<Vec<&[f64]>> {
        let mut offset = 0;
        for (n, len) in &self.recorded {
            if n == name {
                return Some(self.states.iter().map(|row| &row[offset..offset + len]).collect());
            }
            offset += len;
        }
        None
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&[f64]> {
        self.snapshots
            .iter()
            .find(|(ts, _)| (ts - t).abs() < 1e-9 * (1.0 + t.abs()))
            .map(|(_, y)| y.as_slice())
    }

    /// Appends another trajectory, skipping its first record when it
    /// duplicates our last one (resumed runs).
    pub fn extend(&mut self, other: Trajectory) {
        let skip = match (self.times.last(), other.times.first()) {
            (Some(a), Some(b)) if (a - b).abs() < 1e-12 => 1,
            _ => 0,
        };
        if self.metric_names.is_empty() {
            self.metric_names = other.metric_names;
            self.recorded = other.recorded;
        }
        self.times.extend(other.times.into_iter().skip(skip));
        self.metrics.extend(other.metrics.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        self.step_error.extend(other.step_error.into_iter().skip(skip));
        self.snapshots.extend(other.snapshots);
    }
}

// Bogacki-Shampine 3(2)
const C2: f64 = 0.5;
const C3: f64 = 0.75;
const B1: f64 = 2.0 / 9.0;
const B2: f64 = 1.0 / 3.0;
const B3: f64 = 4.0 / 9.0;
const E1: f64 = 7.0 / 24.0;
const E2: f64 = 0.25;
const E3: f64 = 1.0 / 3.0;
const E4: f64 = 0.125;

fn eval(system: &dyn DelaySystem, history: &HistoryBuffer, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), DelayError> {
    let past = Past::new(history, t, y);
    system.rhs(t, y, &past, dy)
}

fn first_non_finite(layout: &StateLayout, y: &[f64]) -> Option<String> {
    let idx = y.iter().position(|v| !v.is_finite())?;
    Some(
        layout
            .component_at(idx)
            .map(|c| c.name.clone())
            .unwrap_or_else(|| format!("entry {idx}")),
    )
}

/// Advances `state` to `opts.t_end` with fixed-step Bogacki-Shampine RK3.
///
/// Delayed arguments at intermediate stages come from the history buffer.
/// On a non-finite value the run aborts and the error carries the last
/// valid state.
pub fn integrate(
    system: &dyn DelaySystem,
    state: &mut SimState,
    opts: &IntegrateOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<Trajectory, DelayError> {
    let layout = system.layout().clone();
    check_len(&layout, &state.y)?;
    let dt = state.dt;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DelayError::Config(format!("step must be positive, got {dt}")));
    }
    let max_delay = system.max_delay();
    if max_delay > 0.0 && dt > max_delay * (1.0 + 1e-12) {
        return Err(DelayError::Config(format!(
            "step {dt} exceeds the maximal delay {max_delay}"
        )));
    }
    if opts.stride == 0 {
        return Err(DelayError::Config("output stride must be at least 1".into()));
    }
    let mut recorded = Vec::new();
    for name in &opts.record {
        let comp = layout
            .get(name)
            .ok_or_else(|| DelayError::Config(format!("unknown component {name}")))?;
        recorded.push((name.clone(), comp.range()));
    }
    let min_delay = system.min_delay();
    let fsal_ok = min_delay == 0.0 || min_delay >= dt * (1.0 - 1e-12);

    let n = layout.len();
    let mut k1 = match state.fsal.take() {
        Some(k) if fsal_ok => k,
        _ => {
            let mut k = vec![0.0; n];
            eval(system, &state.history, state.t(), &state.y, &mut k)?;
            k
        }
    };
    if state.step == 0 || state.history.last_time() == Some(state.t()) {
        state.history.set_last_right_slope(&k1);
    }
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut next = vec![0.0; n];

    let mut traj = Trajectory {
        metric_names: system.metric_names(),
        recorded: recorded.iter().map(|(n, r)| (n.clone(), r.len())).collect(),
        ..Default::default()
    };
    let mut pending_snapshots: BTreeMap<u64, f64> = BTreeMap::new();
    for &ts in &opts.snapshot_times {
        let k = ((ts - state.t0) / dt).round();
        if k >= state.step as f64 {
            pending_snapshots.insert(k as u64, ts);
        }
    }
    let mut max_err: f64 = 0.0;

    let record = |traj: &mut Trajectory, state: &SimState, err: f64| -> Result<(), DelayError> {
        let t = state.t();
        traj.times.push(t);
        let past = Past::new(&state.history, t, &state.y);
        let mut row = Vec::with_capacity(traj.metric_names.len());
        system.metrics(t, &state.y, &past, &mut row)?;
        traj.metrics.push(row);
        let mut s = Vec::new();
        for (_, r) in &recorded {
            s.extend_from_slice(&state.y[r.clone()]);
        }
        traj.states.push(s);
        traj.step_error.push(err);
        Ok(())
    };

    let steps_total = ((opts.t_end - state.t0) / dt - 1e-9).ceil().max(0.0) as u64;
    let start_step = state.step;
    if state.step % opts.stride as u64 == 0 || start_step == 0 {
        record(&mut traj, state, 0.0)?;
    }
    if let Some(ts) = pending_snapshots.remove(&state.step) {
        traj.snapshots.push((ts, state.y.clone()));
    }
    if start_step == 0 {
        for obs in observers.iter_mut() {
            obs.observe(state.t(), &state.y, &state.history)?;
        }
    }

    while state.step < steps_total {
        let t = state.t();
        let y = &state.y;
        for i in 0..n {
            stage[i] = y[i] + dt * C2 * k1[i];
        }
        eval(system, &state.history, t + C2 * dt, &stage, &mut k2)?;
        for i in 0..n {
            stage[i] = y[i] + dt * C3 * k2[i];
        }
        eval(system, &state.history, t + C3 * dt, &stage, &mut k3)?;
        for i in 0..n {
            next[i] = y[i] + dt * (B1 * k1[i] + B2 * k2[i] + B3 * k3[i]);
        }
        if let Some(component) = first_non_finite(&layout, &next) {
            return Err(DelayError::NonFinite {
                t: t + dt,
                component,
                snapshot: Box::new(state.clone()),
            });
        }
        let t_next = state.t0 + (state.step + 1) as f64 * dt;
        eval(system, &state.history, t_next, &next, &mut k4)?;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let low = y[i] + dt * (E1 * k1[i] + E2 * k2[i] + E3 * k3[i] + E4 * k4[i]);
            err = err.max((next[i] - low).abs());
        }
        max_err = max_err.max(err);

        state.history.push(t_next, &next, &k4)?;
        std::mem::swap(&mut state.y, &mut next);
        state.step += 1;
        if fsal_ok {
            std::mem::swap(&mut k1, &mut k4);
        } else {
            eval(system, &state.history, t_next, &state.y, &mut k1)?;
            state.history.set_last_right_slope(&k1);
        }

        for obs in observers.iter_mut() {
            obs.observe(t_next, &state.y, &state.history)?;
        }
        if state.step % opts.stride as u64 == 0 || (opts.record_final && state.step == steps_total) {
            record(&mut traj, state, max_err)?;
            max_err = 0.0;
        }
        if let Some(ts) = pending_snapshots.remove(&state.step) {
            traj.snapshots.push((ts, state.y.clone()));
        }
    }
    state.fsal = Some(k1);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `y' = -y`, no delay.
    struct Decay {
        layout: StateLayout,
    }

    impl DelaySystem for Decay {
        fn layout(&self) -> &StateLayout {
            &self.layout
        }
        fn max_delay(&self) -> f64 {
            0.0
        }
        fn rhs(&self, _t: f64, y: &[f64], _p: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
            dy[0] = -y[0];
            Ok(())
        }
        fn metric_names(&self) -> Vec<String> {
            vec!["y".into()]
        }
        fn metrics(&self, _t: f64, y: &[f64], _p: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
            out.push(y[0]);
            Ok(())
        }
    }

    /// `y' = -k y(t - d)`.
    struct Dde {
        layout: StateLayout,
        k: f64,
        d: f64,
    }

    impl DelaySystem for Dde {
        fn layout(&self) -> &StateLayout {
            &self.layout
        }
        fn max_delay(&self) -> f64 {
            self.d
        }
        fn rhs(&self, t: f64, _y: &[f64], past: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
            let mut v = [0.0];
            past.fill(t - self.d, 0..1, &mut v)?;
            dy[0] = -self.k * v[0];
            Ok(())
        }
    }

    fn scalar_layout(delayed: bool) -> StateLayout {
        StateLayout::builder().field("y", 1, 1, delayed).build()
    }

    fn decay_error(dt: f64) -> f64 {
        let sys = Decay {
            layout: scalar_layout(false),
        };
        let mut st = SimState::with_constant_history(&sys, 0.0, vec![1.0], dt, Interp::CubicHermite).unwrap();
        let opts = IntegrateOptions {
            t_end: 1.0,
            stride: 1_000_000,
            ..Default::default()
        };
        integrate(&sys, &mut st, &opts, &mut []).unwrap();
        (st.y[0] - (-1.0_f64).exp()).abs()
    }

    #[test]
    fn exponential_decay_endpoint() {
        assert!(decay_error(1e-3) < 1e-7);
    }

    #[test]
    fn third_order_convergence() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&h| decay_error(h)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((4.0..=16.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn layout_puts_delayed_first() {
        let l = StateLayout::builder()
            .kernel("w", 2, 1, 1)
            .field("a", 2, 1, false)
            .field("z", 2, 1, true)
            .build();
        assert_eq!(l.component("z").offset, 0);
        assert_eq!(l.history_width(), 2);
        assert_eq!(l.len(), 8);
        assert_eq!(l.component_at(5).unwrap().name, "w");
    }

    #[test]
    fn resuming_matches_a_single_run() {
        let sys = Dde {
            layout: scalar_layout(true),
            k: 2.0,
            d: 0.1,
        };
        let mut whole = SimState::with_constant_history(&sys, 0.0, vec![1.0], 0.01, Interp::CubicHermite).unwrap();
        let opts = IntegrateOptions {
            t_end: 1.0,
            stride: 10,
            ..Default::default()
        };
        integrate(&sys, &mut whole, &opts, &mut []).unwrap();

        let mut split = SimState::with_constant_history(&sys, 0.0, vec![1.0], 0.01, Interp::CubicHermite).unwrap();
        let half = IntegrateOptions {
            t_end: 0.5,
            ..opts.clone()
        };
        integrate(&sys, &mut split, &half, &mut []).unwrap();
        let resumed = split.clone();
        let mut resumed = resumed;
        integrate(&sys, &mut resumed, &opts, &mut []).unwrap();
        assert_eq!(resumed.y, whole.y);
        assert_eq!(resumed.step, 100);
    }

    #[test]
    fn step_larger_than_delay_is_rejected() {
        let sys = Dde {
            layout: scalar_layout(true),
            k: 1.0,
            d: 0.01,
        };
        let mut st = SimState::with_constant_history(&sys, 0.0, vec![1.0], 0.1, Interp::Linear).unwrap();
        let err = integrate(&sys, &mut st, &IntegrateOptions::default(), &mut []).unwrap_err();
        assert!(matches!(err, DelayError::Config(_)));
    }

    #[test]
    fn blow_up_aborts_with_snapshot() {
        struct Blow(StateLayout);
        impl DelaySystem for Blow {
            fn layout(&self) -> &StateLayout {
                &self.0
            }
            fn max_delay(&self) -> f64 {
                0.0
            }
            fn rhs(&self, _t: f64, y: &[f64], _p: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
                dy[0] = y[0] * y[0];
                Ok(())
            }
        }
        let sys = Blow(scalar_layout(false));
        let mut st = SimState::with_constant_history(&sys, 0.0, vec![1.0], 0.01, Interp::Linear).unwrap();
        let opts = IntegrateOptions {
            t_end: 5.0,
            ..Default::default()
        };
        match integrate(&sys, &mut st, &opts, &mut []) {
            Err(DelayError::NonFinite { component, snapshot, .. }) => {
                assert_eq!(component, "y");
                assert!(snapshot.y[0].is_finite());
                assert!(snapshot.t() < 5.0);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn records_at_stride_and_snapshots() {
        let sys = Decay {
            layout: scalar_layout(false),
        };
        let mut st = SimState::with_constant_history(&sys, 0.0, vec![1.0], 0.01, Interp::Linear).unwrap();
        let opts = IntegrateOptions {
            t_end: 1.0,
            stride: 10,
            record: vec!["y".into()],
            snapshot_times: vec![0.0, 0.5, 1.0],
            record_final: true,
        };
        let tr = integrate(&sys, &mut st, &opts, &mut []).unwrap();
        assert_eq!(tr.times.len(), 11);
        assert!((tr.times[10] - 1.0).abs() < 1e-12);
        assert_eq!(tr.snapshots.len(), 3);
        assert_eq!(tr.metric("y").unwrap()[10], tr.recorded_component("y").unwrap()[10][0]);
        assert!(tr.step_error[5] > 0.0 && tr.step_error[5] < 1e-6);
    }
}
