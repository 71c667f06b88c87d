use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, ScenarioConfig};
use super::report::{
    half_life, half_life_estimate, steady_stats, trend_slope, DriftSummary, LyapunovSummary, MetricSummary, PeSummary, RunReport,
    SweepRow, SweepTable,
};
use crate::analysis::{kappa_timeline, LyapunovMonitor, LyapunovReport, PeMetric, SampledSignal};
use crate::control::{make_signal, ExactLoop, HighGainLoop, SignalSpec, SimLoop};
use crate::delay::{
    integrate, DelaySystem, IntegrateOptions, Interp, ModelParams, SharedInput, SimState, StepObserver, Trajectory,
};
use crate::observer::{alpha_star, ErrorCoordinates, ObserverSystem};
use crate::field::KernelField;
use crate::{Error, Result};

/// Dense dump of a kernel, `(N rows) x (N cols)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelDump {
    pub name: String,
    /// `None` for the true kernel.
    pub t: Option<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl KernelDump {
    fn from_flat(name: &str, t: Option<f64>, flat: &[f64], n: usize, rows: usize, cols: usize) -> Self {
        let mut data = vec![0.0; n * rows * n * cols];
        let width = n * cols;
        for r in 0..n {
            for rp in 0..n {
                let b = &flat[(r * n + rp) * rows * cols..(r * n + rp + 1) * rows * cols];
                for a in 0..rows {
                    for c in 0..cols {
                        data[(r * rows + a) * width + rp * cols + c] = b[a * cols + c];
                    }
                }
            }
        }
        Self {
            name: name.into(),
            t,
            rows: n * rows,
            cols: width,
            data,
        }
    }

    pub fn of_kernel(name: &str, k: &KernelField) -> Self {
        Self::from_flat(name, None, k.data(), k.n_points(), k.row_dim(), k.col_dim())
    }
}

/// Everything a run produces; files are written by [`super::write_artifacts`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub report: RunReport,
    pub kernels: Vec<KernelDump>,
    pub lyapunov: Option<LyapunovReport>,
    /// Metrics and the recorded fields at every record; empty for sweeps.
    pub trajectory: Trajectory,
    /// Member runs of a sweep.
    pub runs: Vec<RunOutput>,
}

struct Simulated {
    traj: Trajectory,
    lyapunov: Option<LyapunovReport>,
}

fn simulate(
    system: &dyn DelaySystem,
    coords: Option<&dyn ErrorCoordinates>,
    y0: Vec<f64>,
    cfg: &ScenarioConfig,
    record: &[&str],
) -> Result<Simulated> {
    let mut state = SimState::with_constant_history(system, 0.0, y0, cfg.dt, Interp::CubicHermite)?;
    let opts = IntegrateOptions {
        t_end: cfg.t_end,
        stride: cfg.stride,
        record: record.iter().map(|s| s.to_string()).collect(),
        snapshot_times: cfg.snapshot_times.iter().copied().filter(|&t| t <= cfg.t_end + 1e-12).collect(),
        record_final: true,
    };
    let mut monitor = match coords {
        Some(c) => Some(LyapunovMonitor::new(c)?),
        None => None,
    };
    let traj = {
        let mut observers: Vec<&mut dyn StepObserver> = Vec::new();
        if let Some(m) = monitor.as_mut() {
            observers.push(m);
        }
        integrate(system, &mut state, &opts, &mut observers)?
    };
    Ok(Simulated {
        traj,
        lyapunov: monitor.map(|m| m.report()),
    })
}

fn add_noise(y: &mut [f64], range: std::ops::Range<usize>, amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude > 0.0 {
        for v in &mut y[range] {
            *v += rng.random_range(-amplitude..=amplitude);
        }
    }
}

/// `S_1j(z_j(t - d))` for the populations named in `sources`, delayed by the
/// constant delay of coupling `(0, 0)`.
fn excitation_signal(
    params: &ModelParams,
    traj: &Trajectory,
    sources: &[(&str, usize)],
    record_dt: f64,
    warnings: &mut Vec<String>,
) -> Option<(SampledSignal, PeMetric)> {
    let n = params.n_points();
    let n1 = params.dims[0];
    let comps: Vec<(Vec<&[f64]>, usize, usize)> = sources
        .iter()
        .filter(|(_, j)| params.dims[*j] > 0)
        .filter_map(|(name, j)| traj.recorded_component(name).map(|c| (c, *j, params.dims[*j])))
        .collect();
    if comps.is_empty() || traj.times.len() < 2 {
        return None;
    }
    let dim: usize = comps.len() * n * n1;
    let mut data = Vec::with_capacity(traj.times.len() * dim);
    let mut weights = Vec::with_capacity(dim);
    for _ in &comps {
        weights.extend((0..n * n1).map(|k| params.grid.weight(k / n1)));
    }
    for k in 0..traj.times.len() {
        for (rows, j, nj) in &comps {
            let act = &params.coupling(0, *j).activation;
            for r in 0..n {
                data.extend(act.eval(&rows[k][r * nj..(r + 1) * nj], n1));
            }
        }
    }
    let signal = SampledSignal {
        t0: traj.times[0],
        dt: record_dt,
        dim,
        data,
    };
    let delay = params.coupling(0, 0).delay.constant_value().unwrap_or_else(|| {
        warnings.push("excitation timeline ignores non-constant delays".into());
        0.0
    });
    let shift = (delay / record_dt).round() as usize;
    if (shift as f64 * record_dt - delay).abs() > 1e-9 {
        warnings.push(format!("delay {delay} is not a multiple of the record step {record_dt}"));
    }
    let metric = PeMetric {
        target_weights: weights.clone(),
        weights,
        p: None,
    };
    Some((signal.delayed(shift), metric))
}

fn pe_summary(
    cfg: &ScenarioConfig,
    params: &ModelParams,
    traj: &Trajectory,
    sources: &[(&str, usize)],
    warnings: &mut Vec<String>,
) -> Result<Option<PeSummary>> {
    let record_dt = cfg.dt * cfg.stride as f64;
    let Some((signal, metric)) = excitation_signal(params, traj, sources, record_dt, warnings) else {
        return Ok(None);
    };
    let steps = (cfg.pe_window / record_dt).round().max(1.0);
    let window = steps * record_dt;
    if signal.len() <= steps as usize {
        warnings.push(format!("run too short for excitation windows of length {window}"));
        return Ok(None);
    }
    let stride = ((steps / 2.0) as usize).max(1);
    let tl = kappa_timeline(&signal, window, stride, &metric)?;
    let kappa: Vec<f64> = tl.iter().map(|p| p.1).collect();
    let names: Vec<String> = sources
        .iter()
        .filter(|(_, j)| params.dims[*j] > 0)
        .map(|(s, j)| format!("S1{}({s}(t - d))", j + 1))
        .collect();
    Ok(Some(PeSummary {
        signal: names.join(", "),
        window,
        starts: tl.iter().map(|p| p.0).collect(),
        first: kappa[0],
        last: *kappa.last().unwrap(),
        min: kappa.iter().copied().fold(f64::INFINITY, f64::min),
        max: kappa.iter().copied().fold(0.0, f64::max),
        kappa,
    }))
}

fn lyapunov_summary(r: &LyapunovReport, certified: bool) -> LyapunovSummary {
    LyapunovSummary {
        certified: certified && r.certified,
        samples: r.times.len(),
        violations: r.violation_count(),
        worst_excess: r.worst_excess,
        initial: r.value.first().copied().unwrap_or(0.0),
        last: r.value.last().copied().unwrap_or(0.0),
    }
}

struct Parts {
    sim: Simulated,
    params: ModelParams,
    kernel_names: Vec<(&'static str, &'static str, usize)>,
    layout: crate::delay::StateLayout,
    primary: &'static str,
    kernel_error: Option<&'static str>,
    pe_sources: Vec<(&'static str, usize)>,
    warnings: Vec<String>,
}

fn sine(mu: f64, lambda: f64) -> SignalSpec {
    SignalSpec::SpaceTimeSine { mu, lambda }
}

fn assemble(cfg: &ScenarioConfig, perturbation: f64) -> Result<Parts> {
    let params = cfg.build_params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();
    let ini = &cfg.initial;
    let astar = alpha_star(&params)?;
    let monitored = params.alpha > astar;
    if !monitored {
        warnings.push(format!(
            "gain {} does not exceed the threshold {astar}; no decrease certificate",
            params.alpha
        ));
    }
    let parts = match cfg.mode {
        Mode::OpenLoopObserver => {
            let sys = ObserverSystem::new(params.clone(), observer_inputs(&params)?)?;
            let mut y = sys.initial_state(ini.z1, ini.z2, ini.zhat1, ini.zhat2);
            for k in ["what11", "what12"] {
                add_noise(&mut y, sys.layout().component(k).range(), ini.what_noise, &mut rng);
            }
            let sim = simulate(&sys, monitored.then_some(&sys as &dyn ErrorCoordinates), y, cfg, &["z1", "z2"])?;
            Parts {
                sim,
                layout: sys.layout().clone(),
                params,
                kernel_names: vec![("what11", "w11", 0), ("what12", "w12", 1)],
                primary: "norm_z1",
                kernel_error: Some("err_w"),
                pe_sources: vec![("z1", 0), ("z2", 1)],
                warnings,
            }
        }
        Mode::ExactStabilization | Mode::PerturbationSweep | Mode::DriftStudy => {
            let sys = ExactLoop::new(params.clone())?.with_perturbation(perturbation);
            let mut y = sys.initial_state(ini.z1, ini.z2, ini.zhat2);
            for k in ["what11", "what12"] {
                add_noise(&mut y, sys.layout().component(k).range(), ini.what_noise, &mut rng);
            }
            let sim = simulate(&sys, monitored.then_some(&sys as &dyn ErrorCoordinates), y, cfg, &["z1", "z2"])?;
            Parts {
                sim,
                layout: sys.layout().clone(),
                params,
                kernel_names: vec![("what11", "w11", 0), ("what12", "w12", 1)],
                primary: "norm_z1",
                kernel_error: Some("err_w"),
                pe_sources: vec![("z1", 0), ("z2", 1)],
                warnings,
            }
        }
        Mode::SimultaneousPe => {
            let v = make_signal(&cfg.excitation, &params.grid, params.dims[0])?;
            let sys = SimLoop::new(params.clone(), v)?;
            warnings.extend(sys.audit.warnings().map(|(item, why)| format!("restriction ({item}): {why}")));
            let mut y = sys.initial_state(ini.z1, ini.zhat1);
            add_noise(&mut y, sys.layout().component("what").range(), ini.what_noise, &mut rng);
            let sim = simulate(&sys, monitored.then_some(&sys as &dyn ErrorCoordinates), y, cfg, &["z"])?;
            Parts {
                sim,
                layout: sys.layout().clone(),
                params,
                kernel_names: vec![("what", "w11", 0)],
                primary: "norm_z",
                kernel_error: Some("err_w"),
                pe_sources: vec![("z", 0)],
                warnings,
            }
        }
        Mode::HighGainBaseline => {
            let gamma = vec![cfg.gamma; params.n_points() * params.dims[0]];
            let sys = HighGainLoop::with_gamma(params.clone(), gamma)?;
            let y = sys.initial_state(ini.z1, ini.z2);
            let sim = simulate(&sys, None, y, cfg, &["z1", "z2"])?;
            Parts {
                sim,
                layout: sys.layout().clone(),
                params,
                kernel_names: Vec::new(),
                primary: "norm_z1",
                kernel_error: None,
                pe_sources: vec![("z1", 0), ("z2", 1)],
                warnings,
            }
        }
    };
    Ok(parts)
}

/// One integration of the configured loop with a constant perturbation on
/// `u1` (exact-stabilization loops only).
fn run_single(cfg: &ScenarioConfig, perturbation: f64) -> Result<RunOutput> {
    let Parts {
        sim,
        params,
        kernel_names,
        layout,
        primary,
        kernel_error,
        pe_sources,
        mut warnings,
    } = assemble(cfg, perturbation)?;
    let traj = &sim.traj;
    let mut metric_names = traj.metric_names.clone();
    let mut metrics = traj.metrics.clone();
    // total kernel error for the observer, whose metrics list the blocks
    if kernel_error == Some("err_w") && !metric_names.iter().any(|n| n == "err_w") {
        let a = metric_names.iter().position(|n| n == "err_w11");
        let b = metric_names.iter().position(|n| n == "err_w12");
        if let (Some(a), Some(b)) = (a, b) {
            for row in &mut metrics {
                let v = row[a].hypot(row[b]);
                row.push(v);
            }
            metric_names.push("err_w".into());
        }
    }
    let [from, to] = cfg.steady_window;
    let column = |k: usize| -> Vec<f64> { metrics.iter().map(|r| r[k]).collect() };
    let summary: Vec<MetricSummary> = metric_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let c = column(k);
            MetricSummary {
                name: name.clone(),
                initial: c.first().copied().unwrap_or(f64::NAN),
                last: c.last().copied().unwrap_or(f64::NAN),
                max: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                steady: steady_stats(&traj.times, &c, from, to),
            }
        })
        .collect();
    let steady = summary.iter().find(|s| s.name == primary).and_then(|s| s.steady);
    if steady.is_none() {
        warnings.push(format!("steady window [{from}, {to}] is not covered by the run"));
    }
    let kernel_series = kernel_error
        .and_then(|name| metric_names.iter().position(|n| n == name))
        .map(column);
    let kernel_half_life = kernel_series.as_ref().and_then(|w| half_life(&traj.times, w));
    let kernel_half_life_estimate = kernel_series.as_ref().and_then(|w| half_life_estimate(&traj.times, w));
    let pe = pe_summary(cfg, &params, traj, &pe_sources, &mut warnings)?;
    let mut kernels = Vec::new();
    let n = params.n_points();
    for (comp, truth, j) in &kernel_names {
        let rows = params.dims[0];
        let cols = params.dims[*j];
        kernels.push(KernelDump::from_flat(truth, None, params.coupling(0, *j).kernel.data(), n, rows, cols));
        for (t, y) in &traj.snapshots {
            let flat = &y[layout.component(comp).range()];
            kernels.push(KernelDump::from_flat(&format!("{truth}_hat"), Some(*t), flat, n, rows, cols));
        }
    }
    let lyapunov = sim.lyapunov;
    let report = RunReport {
        name: cfg.name.clone(),
        mode: cfg.mode,
        times: traj.times.clone(),
        metric_names,
        metrics,
        summary,
        primary: primary.into(),
        steady,
        kernel_error: kernel_error.map(String::from),
        kernel_half_life,
        kernel_half_life_estimate,
        lyapunov: lyapunov.as_ref().map(|r| lyapunov_summary(r, perturbation == 0.0)),
        pe,
        sweep: None,
        drift: None,
        warnings,
    };
    Ok(RunOutput {
        config: cfg.clone(),
        report,
        kernels,
        lyapunov,
        trajectory: sim.traj,
        runs: Vec::new(),
    })
}

fn empty_report(cfg: &ScenarioConfig) -> RunReport {
    RunReport {
        name: cfg.name.clone(),
        mode: cfg.mode,
        times: Vec::new(),
        metric_names: Vec::new(),
        metrics: Vec::new(),
        summary: Vec::new(),
        primary: "norm_z1".into(),
        steady: None,
        kernel_error: None,
        kernel_half_life: None,
        kernel_half_life_estimate: None,
        lyapunov: None,
        pe: None,
        sweep: None,
        drift: None,
        warnings: Vec::new(),
    }
}

/// Runs the configured scenario; sweeps and drift studies dispatch to
/// [`run_perturbation_sweep`] and [`run_drift_study`].
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.mode {
        Mode::PerturbationSweep => run_perturbation_sweep(cfg),
        Mode::DriftStudy => run_drift_study(cfg, cfg.drift_amplitude),
        _ => run_single(cfg, 0.0),
    }
}

/// One exact-stabilization run per amplitude of a uniform constant
/// perturbation on `u1`. Runs execute in parallel.
pub fn run_perturbation_sweep(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if !cfg.model.fully_actuated {
        return Err(Error::Config("the perturbation sweep needs model.fully_actuated = true".into()));
    }
    let member = |a: f64| {
        let mut c = cfg.clone();
        c.name = format!("{}_amp_{a}", cfg.name);
        run_single(&c, a)
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<Result<RunOutput>> = {
        use rayon::prelude::*;
        cfg.amplitudes.par_iter().map(|&a| member(a)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<RunOutput>> = cfg.amplitudes.iter().map(|&a| member(a)).collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(runs.len());
    for (a, r) in cfg.amplitudes.iter().zip(&runs) {
        let s = r
            .report
            .steady
            .ok_or_else(|| Error::Config(format!("steady window not covered for amplitude {a}")))?;
        rows.push(SweepRow {
            amplitude: *a,
            steady_max: s.max,
            steady_avg: s.avg,
            oscillating: s.oscillating,
        });
    }
    let mut report = empty_report(cfg);
    report.sweep = Some(SweepTable { rows });
    Ok(RunOutput {
        config: cfg.clone(),
        report,
        kernels: Vec::new(),
        lyapunov: None,
        trajectory: Trajectory::default(),
        runs,
    })
}

/// Long exact-stabilization run under a constant perturbation of the given
/// amplitude, summarizing the kernel-error and control trends.
pub fn run_drift_study(cfg: &ScenarioConfig, amplitude: f64) -> Result<RunOutput> {
    cfg.validate()?;
    let mut out = run_single(cfg, amplitude)?;
    let r = &out.report;
    let w = r.metric("err_w").ok_or_else(|| Error::Config("kernel error not recorded".into()))?;
    let u = r.metric("norm_u1").ok_or_else(|| Error::Config("control norm not recorded".into()))?;
    let t = &r.times;
    let t_end = *t.last().unwrap_or(&0.0);
    let max_from = |a: f64, b: f64| {
        t.iter()
            .zip(&u)
            .filter(|(s, _)| **s >= a - 1e-12 && **s <= b + 1e-12)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    let drift = DriftSummary {
        amplitude,
        w_initial: w[0],
        w_mid: r.metric_at("err_w", 0.5 * t_end).unwrap_or(f64::NAN),
        w_end: *w.last().unwrap(),
        w_slope_final_third: trend_slope(t, &w, 2.0 * t_end / 3.0),
        u1_max_middle_third: max_from(t_end / 3.0, 2.0 * t_end / 3.0),
        u1_max_final_third: max_from(2.0 * t_end / 3.0, t_end),
    };
    out.report.drift = Some(drift);
    Ok(out)
}

/// State layout of the system a scenario integrates.
pub fn scenario_layout(cfg: &ScenarioConfig) -> Result<crate::delay::StateLayout> {
    let params = cfg.build_params()?;
    Ok(match cfg.mode {
        Mode::OpenLoopObserver => ObserverSystem::unforced(params)?.layout().clone(),
        Mode::ExactStabilization | Mode::PerturbationSweep | Mode::DriftStudy => ExactLoop::new(params)?.layout().clone(),
        Mode::SimultaneousPe => {
            let v = make_signal(&cfg.excitation, &params.grid, params.dims[0])?;
            SimLoop::new(params, v)?.layout().clone()
        }
        Mode::HighGainBaseline => HighGainLoop::new(params)?.layout().clone(),
    })
}

/// Input fields of the open-loop observer scenario.
pub fn observer_inputs(params: &ModelParams) -> Result<[SharedInput; 2]> {
    let g = &params.grid;
    Ok([
        make_signal(&sine(params.mu, params.lambda[0]), g, params.dims[0])?,
        make_signal(&sine(params.mu, params.lambda[1]), g, params.dims[1])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: Mode) -> ScenarioConfig {
        let mut c = ScenarioConfig::smoke(mode);
        c.grid.n_points = 6;
        c.t_end = 1.0;
        c.steady_window = [0.5, 1.0];
        c.snapshot_times = vec![0.0, 1.0];
        c.pe_window = 0.2;
        c
    }

    #[test]
    fn every_mode_runs() {
        for mode in Mode::ALL {
            let out = run_scenario(&quick(mode)).unwrap();
            let r = &out.report;
            match mode {
                Mode::PerturbationSweep => {
                    assert_eq!(r.sweep.as_ref().unwrap().rows.len(), 3);
                    assert_eq!(out.runs.len(), 3);
                }
                _ => {
                    assert_eq!(r.times.len(), 101);
                    assert!(r.steady.is_some(), "{mode:?}");
                    assert!(r.pe.is_some(), "{mode:?}");
                    assert!(r.metrics.iter().flatten().all(|v| v.is_finite()));
                }
            }
            if mode == Mode::DriftStudy {
                assert!(r.drift.is_some());
            }
            if mode == Mode::HighGainBaseline {
                assert!(r.lyapunov.is_none() && out.kernels.is_empty());
            }
        }
    }

    #[test]
    fn kernel_dumps_start_at_zero() {
        let out = run_scenario(&quick(Mode::OpenLoopObserver)).unwrap();
        let first = out.kernels.iter().find(|k| k.name == "w11_hat" && k.t == Some(0.0)).unwrap();
        assert_eq!((first.rows, first.cols), (6, 6));
        assert!(first.data.iter().all(|&v| v == 0.0));
        let truth = out.kernels.iter().find(|k| k.name == "w11" && k.t.is_none()).unwrap();
        let p = out.config.build_params().unwrap();
        assert_eq!(truth.data[1], p.coupling(0, 0).kernel.block(0, 1)[0]);
        assert!(out.kernels.iter().any(|k| k.name == "w11_hat" && k.t == Some(1.0)));
    }

    #[test]
    fn identical_configs_give_identical_reports() {
        let mut c = quick(Mode::ExactStabilization);
        c.initial.what_noise = 0.1;
        c.seed = 9;
        let a = run_scenario(&c).unwrap().report;
        let b = run_scenario(&c).unwrap().report;
        assert_eq!(a, b);
        c.seed = 10;
        assert_ne!(run_scenario(&c).unwrap().report.metrics, a.metrics);
    }

    #[test]
    fn observer_report_has_total_kernel_error() {
        let r = run_scenario(&quick(Mode::OpenLoopObserver)).unwrap().report;
        let w = r.metric("err_w").unwrap();
        let a = r.metric("err_w11").unwrap();
        let b = r.metric("err_w12").unwrap();
        assert!((w[5] - a[5].hypot(b[5])).abs() < 1e-15);
        assert!(r.lyapunov.as_ref().unwrap().certified);
    }

    #[test]
    fn unperturbed_sweep_member_settles() {
        let mut c = quick(Mode::PerturbationSweep);
        c.t_end = 4.0;
        c.steady_window = [3.0, 4.0];
        c.amplitudes = vec![0.0, 1.0];
        let r = run_scenario(&c).unwrap();
        let s = r.report.sweep.unwrap();
        assert!(s.rows[0].steady_max < 1e-2, "{:?}", s.rows);
        assert!(s.rows[1].steady_max > s.rows[0].steady_max);
        assert!(!r.runs[1].report.lyapunov.as_ref().unwrap().certified);
    }
}
