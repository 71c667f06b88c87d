use serde::{Deserialize, Serialize};

use crate::control::SignalSpec;
use crate::delay::{Coupling, DelaySpec, ModelParams};
use crate::field::{build_grid, gaussian_kernel, ActivationSpec, DistanceKind, MeasureKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoopObserver,
    ExactStabilization,
    SimultaneousPe,
    PerturbationSweep,
    DriftStudy,
    HighGainBaseline,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::OpenLoopObserver,
        Mode::ExactStabilization,
        Mode::SimultaneousPe,
        Mode::PerturbationSweep,
        Mode::DriftStudy,
        Mode::HighGainBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OpenLoopObserver => "open_loop_observer",
            Mode::ExactStabilization => "exact_stabilization",
            Mode::SimultaneousPe => "simultaneous_pe",
            Mode::PerturbationSweep => "perturbation_sweep",
            Mode::DriftStudy => "drift_study",
            Mode::HighGainBaseline => "high_gain_baseline",
        }
    }

    /// Modes that need every population measured.
    pub fn needs_full_actuation(self) -> bool {
        matches!(self, Mode::SimultaneousPe | Mode::PerturbationSweep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub measure: MeasureKind,
    pub distance: DistanceKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_points: 20,
            measure: MeasureKind::Lebesgue,
            distance: DistanceKind::Geodesic,
        }
    }
}

/// Plant, observer and input parameters. Defaults are the reference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the Gaussian `exp(-sigma |r - r'|^2)` before normalization.
    pub sigma: f64,
    /// Strengths `omega_ij` of the normalized kernels.
    pub omega: [[f64; 2]; 2],
    pub tau: [f64; 2],
    pub delay: DelaySpec,
    pub activation: ActivationSpec,
    pub alpha: f64,
    pub zref1: f64,
    /// Amplitude of the open-loop inputs `mu sin(lambda_i t r)`.
    pub mu: f64,
    pub lambda: [f64; 2],
    /// Drop the unmeasured population (`n2 = 0`).
    pub fully_actuated: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma: 60.0,
            omega: [[2.0, 2.0], [-2.0, 0.1]],
            tau: [1.0, 1.0],
            delay: DelaySpec::Constant { delay: 0.1 },
            activation: ActivationSpec::Tanh,
            alpha: 100.0,
            zref1: 0.0,
            mu: 1e3,
            lambda: [100.0, 100.0 * std::f64::consts::SQRT_2],
            fully_actuated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub z1: f64,
    pub z2: f64,
    pub zhat1: f64,
    pub zhat2: f64,
    /// Uniform noise amplitude on the initial kernel estimates, drawn from
    /// the scenario seed.
    pub what_noise: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            z1: 1.0,
            z2: 1.0,
            zhat1: 1.0,
            zhat2: 0.0,
            what_noise: 0.0,
        }
    }
}

/// One scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    pub t_end: f64,
    pub dt: f64,
    /// Record metrics every `stride` steps.
    pub stride: usize,
    pub seed: u64,
    /// Times of the kernel dumps.
    pub snapshot_times: Vec<f64>,
    /// Interval of the steady-state statistics.
    pub steady_window: [f64; 2],
    /// Window length of the excitation timeline.
    pub pe_window: f64,
    /// Perturbation amplitudes of the sweep.
    pub amplitudes: Vec<f64>,
    /// Constant perturbation of the drift study.
    pub drift_amplitude: f64,
    /// Excitation `v` of the simultaneous controller.
    pub excitation: SignalSpec,
    /// Gain profile of the baseline, constant over the grid.
    pub gamma: f64,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub initial: InitialConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "observer".into(),
            mode: Mode::OpenLoopObserver,
            t_end: 10.0,
            dt: 1e-3,
            stride: 10,
            seed: 0,
            snapshot_times: vec![0.0, 2.0, 5.0, 10.0],
            steady_window: [5.0, 10.0],
            pe_window: 1.0,
            amplitudes: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0],
            drift_amplitude: 2.0,
            excitation: SignalSpec::SpaceTimeSine { mu: 100.0, lambda: 100.0 },
            gamma: 1.0,
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            initial: InitialConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reference setup of each mode.
    pub fn preset(mode: Mode) -> Self {
        let mut c = Self {
            name: mode.name().into(),
            mode,
            ..Self::default()
        };
        c.model.fully_actuated = mode.needs_full_actuation();
        if mode == Mode::DriftStudy {
            c.t_end = 30.0;
            c.snapshot_times = vec![0.0, 10.0, 20.0, 30.0];
        }
        c
    }

    /// Simultaneous run that meets every restriction of the decrease
    /// certificate: two points under the counting measure, an activation
    /// linear on `|z| <= 1`, gain above threshold and a sine-basis excitation
    /// with known excitation level. The state stays inside the linear region.
    pub fn certified() -> Self {
        let mut c = Self::preset(Mode::SimultaneousPe);
        c.name = "simultaneous_certified".into();
        c.grid.n_points = 2;
        c.grid.measure = MeasureKind::Counting;
        c.model.activation = ActivationSpec::locally_linear_scalar(1.0, 0.0, 1.0);
        c.model.alpha = 1.0;
        c.model.omega[0][0] = 0.5;
        c.excitation = SignalSpec::SineBasis {
            period: 8.0,
            kappa: 2.5,
            dim: 2,
        };
        c.t_end = 100.0;
        c.dt = 0.01;
        c.steady_window = [50.0, 100.0];
        c.pe_window = 8.0;
        c.snapshot_times = vec![0.0, 50.0, 100.0];
        c.initial.z1 = 0.0;
        c.initial.zhat1 = 0.0;
        c
    }

    /// Cheap variant for smoke tests: `mu = 10`, coarse grid, short horizon.
    pub fn smoke(mode: Mode) -> Self {
        let mut c = Self::preset(mode);
        c.name = format!("{}_smoke", mode.name());
        c.model.mu = 10.0;
        c.grid.n_points = 8;
        c.t_end = 2.0;
        c.steady_window = [1.0, 2.0];
        c.snapshot_times = vec![0.0, 1.0, 2.0];
        c.amplitudes = vec![0.0, 1.0, 2.0];
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if ((self.t_end / self.dt).round() * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return bad(format!("t_end {} is not a multiple of dt {}", self.t_end, self.dt));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        let [a, b] = self.steady_window;
        if !(a < b) {
            return bad(format!("steady window [{a}, {b}] is empty"));
        }
        if !(self.pe_window > 0.0) {
            return bad(format!("pe_window must be positive, got {}", self.pe_window));
        }
        if self.mode.needs_full_actuation() && !self.model.fully_actuated {
            return bad(format!("mode {} requires model.fully_actuated = true", self.mode.name()));
        }
        if self.mode == Mode::PerturbationSweep && self.amplitudes.is_empty() {
            return bad("perturbation sweep needs at least one amplitude".into());
        }
        if self.amplitudes.iter().chain([&self.drift_amplitude, &self.gamma]).any(|v| !v.is_finite()) {
            return bad("amplitudes and gains must be finite".into());
        }
        if self.mode == Mode::SimultaneousPe {
            self.excitation.validate(&build_grid(self.grid.n_points, self.grid.measure)?, 1)?;
        }
        Ok(())
    }

    pub fn build_params(&self) -> Result<ModelParams> {
        let grid = build_grid(self.grid.n_points, self.grid.measure)?.with_distance(self.grid.distance);
        let m = &self.model;
        let n = grid.len();
        let mut couplings = Vec::with_capacity(4);
        for row in &m.omega {
            for &omega in row {
                couplings.push(Coupling {
                    kernel: gaussian_kernel(&grid, m.sigma, omega)?,
                    activation: m.activation.clone(),
                    delay: m.delay,
                });
            }
        }
        let mut it = couplings.into_iter();
        let mut next = || it.next().expect("four couplings");
        let couplings = [[next(), next()], [next(), next()]];
        let params = ModelParams {
            dims: [1, 1],
            tau: [vec![m.tau[0]; n], vec![m.tau[1]; n]],
            couplings,
            alpha: m.alpha,
            zref1: vec![m.zref1; n],
            mu: m.mu,
            lambda: m.lambda,
            grid,
        };
        let params = if m.fully_actuated { params.without_population2() } else { params };
        params.validate()?;
        Ok(params)
    }
}
