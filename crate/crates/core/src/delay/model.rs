use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::integrate::{DelaySystem, FieldHistory, Past, StateLayout};
use super::DelayError;
use crate::field::{gaussian_kernel, l2_opnorm, weighted_l2_norm, ActivationSpec, FieldError, KernelField, SpatialGrid};

/// Axonal delay `d(r, r')` of one coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Constant { delay: f64 },
    /// `d(r, r') = dist(r, r') / speed`.
    DistanceProportional { speed: f64 },
}

impl Default for DelaySpec {
    fn default() -> Self {
        Self::Constant { delay: 0.1 }
    }
}

impl DelaySpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        match *self {
            Self::Constant { delay } if !(delay >= 0.0) || !delay.is_finite() => {
                Err(FieldError::Parameter(format!("delay must be finite and nonnegative, got {delay}")))
            }
            Self::DistanceProportional { speed } if !(speed > 0.0) => {
                Err(FieldError::Parameter(format!("propagation speed must be positive, got {speed}")))
            }
            _ => Ok(()),
        }
    }

    pub fn between(&self, grid: &SpatialGrid, r: usize, rp: usize) -> f64 {
        match *self {
            Self::Constant { delay } => delay,
            Self::DistanceProportional { speed } => grid.dist(r, rp) / speed,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Self::Constant { delay } => Some(delay),
            Self::DistanceProportional { .. } => None,
        }
    }

    pub fn max_delay(&self, grid: &SpatialGrid) -> f64 {
        match *self {
            Self::Constant { delay } => delay,
            Self::DistanceProportional { .. } => {
                let n = grid.len();
                let mut m: f64 = 0.0;
                for r in 0..n {
                    for rp in 0..n {
                        m = m.max(self.between(grid, r, rp));
                    }
                }
                m
            }
        }
    }

    /// Smallest strictly positive delay, `None` if all delays vanish.
    pub fn min_positive_delay(&self, grid: &SpatialGrid) -> Option<f64> {
        let n = grid.len();
        let mut m = f64::INFINITY;
        for r in 0..n {
            for rp in 0..n {
                let d = self.between(grid, r, rp);
                if d > 0.0 {
                    m = m.min(d);
                }
                if self.constant_value().is_some() {
                    break;
                }
            }
            if self.constant_value().is_some() {
                break;
            }
        }
        m.is_finite().then_some(m)
    }
}

/// One term `w_ij S_ij(z_j(t - d_ij))` of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub kernel: KernelField,
    pub activation: ActivationSpec,
    pub delay: DelaySpec,
}

impl Coupling {
    pub fn zero(n_points: usize, rows: usize, cols: usize) -> Self {
        Self {
            kernel: KernelField::zeros(n_points, rows, cols),
            activation: ActivationSpec::Tanh,
            delay: DelaySpec::Constant { delay: 0.0 },
        }
    }
}

/// Plant parameters of the two-population delayed field.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub grid: SpatialGrid,
    /// `[n1, n2]`; `n2 = 0` means every population is measured.
    pub dims: [usize; 2],
    /// Diagonal entries of `tau_i(r)`, point-major (`N * n_i`).
    pub tau: [Vec<f64>; 2],
    /// `couplings[i][j]` couples population `j` into population `i`.
    pub couplings: [[Coupling; 2]; 2],
    pub alpha: f64,
    /// Reference `z_ref1`, point-major.
    pub zref1: Vec<f64>,
    pub mu: f64,
    pub lambda: [f64; 2],
}

impl ModelParams {
    /// Scalar populations, `tanh`, unit time constants, normalized Gaussian
    /// kernels of width 60 and strengths (2, 2, -2, 0.1), delay 0.1.
    pub fn table1(grid: SpatialGrid) -> Result<Self, FieldError> {
        let n = grid.len();
        let delay = DelaySpec::Constant { delay: 0.1 };
        let make = |omega: f64| -> Result<Coupling, FieldError> {
            Ok(Coupling {
                kernel: gaussian_kernel(&grid, 60.0, omega)?,
                activation: ActivationSpec::Tanh,
                delay,
            })
        };
        let couplings = [[make(2.0)?, make(2.0)?], [make(-2.0)?, make(0.1)?]];
        Ok(Self {
            dims: [1, 1],
            tau: [vec![1.0; n], vec![1.0; n]],
            couplings,
            alpha: 100.0,
            zref1: vec![0.0; n],
            mu: 1e3,
            lambda: [100.0, 100.0 * std::f64::consts::SQRT_2],
            grid,
        })
    }

    /// Drops the unmeasured population.
    pub fn without_population2(mut self) -> Self {
        let n = self.grid.len();
        let n1 = self.dims[0];
        self.dims[1] = 0;
        self.tau[1].clear();
        let keep = |c: &Coupling, rows: usize, cols: usize| Coupling {
            kernel: KernelField::zeros(n, rows, cols),
            ..c.clone()
        };
        self.couplings[0][1] = keep(&self.couplings[0][1], n1, 0);
        self.couplings[1][0] = keep(&self.couplings[1][0], 0, n1);
        self.couplings[1][1] = keep(&self.couplings[1][1], 0, 0);
        self
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn coupling(&self, i: usize, j: usize) -> &Coupling {
        &self.couplings[i][j]
    }

    /// Whether the `(i, j)` term is present at all.
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.dims[i] > 0 && self.dims[j] > 0
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let n = self.grid.len();
        for i in 0..2 {
            if self.tau[i].len() != n * self.dims[i] {
                return Err(FieldError::Shape {
                    expected: n * self.dims[i],
                    found: self.tau[i].len(),
                });
            }
            if let Some(v) = self.tau[i].iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(FieldError::Parameter(format!("time constants must be positive, got {v}")));
            }
        }
        if self.zref1.len() != n * self.dims[0] {
            return Err(FieldError::Shape {
                expected: n * self.dims[0],
                found: self.zref1.len(),
            });
        }
        if !self.alpha.is_finite() {
            return Err(FieldError::Parameter("gain must be finite".into()));
        }
        for i in 0..2 {
            for j in 0..2 {
                if !self.is_active(i, j) {
                    continue;
                }
                let c = &self.couplings[i][j];
                if c.kernel.n_points() != n || c.kernel.row_dim() != self.dims[i] {
                    return Err(FieldError::DimensionMismatch {
                        left: (c.kernel.n_points(), c.kernel.row_dim()),
                        right: (n, self.dims[i]),
                    });
                }
                c.activation.validate(self.dims[j], c.kernel.col_dim())?;
                c.delay.validate()?;
            }
        }
        Ok(())
    }

    pub fn max_delay(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                if self.is_active(i, j) {
                    m = m.max(self.couplings[i][j].delay.max_delay(&self.grid));
                }
            }
        }
        m
    }

    pub fn min_delay(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..2 {
            for j in 0..2 {
                if self.is_active(i, j) {
                    if let Some(d) = self.couplings[i][j].delay.min_positive_delay(&self.grid) {
                        m = m.min(d);
                    }
                }
            }
        }
        if m.is_finite() {
            m
        } else {
            0.0
        }
    }

    /// `l_ij ||w_ij||` with the pointwise operator norm.
    pub fn gain_product(&self, i: usize, j: usize) -> f64 {
        if !self.is_active(i, j) {
            return 0.0;
        }
        let c = &self.couplings[i][j];
        c.activation.lipschitz() * l2_opnorm(&c.kernel, &self.grid)
    }

    /// Whether every `tau_i` is one scalar shared by all points and entries.
    pub fn uniform_tau(&self) -> Option<f64> {
        let all: Vec<f64> = self.tau.iter().flatten().copied().collect();
        let first = *all.first()?;
        all.iter().all(|v| *v == first).then_some(first)
    }
}

/// `S_ij(z_j(t - d(r, r'), r'))` for all pairs, shared by drive terms and
/// kernel update laws. With a constant delay it only depends on `r'`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedActivation {
    n: usize,
    dim: usize,
    per_pair: bool,
    values: Vec<f64>,
}

impl DelayedActivation {
    pub fn compute(coupling: &Coupling, grid: &SpatialGrid, src: &dyn FieldHistory, t: f64) -> Result<Self, DelayError> {
        let n = grid.len();
        let in_dim = src.dim();
        let dim = coupling.kernel.col_dim();
        match coupling.delay.constant_value() {
            Some(d) => {
                let mut raw = vec![0.0; n * in_dim];
                src.field_at(t - d, &mut raw)?;
                let mut values = vec![0.0; n * dim];
                for p in 0..n {
                    coupling
                        .activation
                        .eval_into(&raw[p * in_dim..(p + 1) * in_dim], &mut values[p * dim..(p + 1) * dim]);
                }
                Ok(Self {
                    n,
                    dim,
                    per_pair: false,
                    values,
                })
            }
            None => {
                let mut raw = vec![0.0; in_dim];
                let mut values = vec![0.0; n * n * dim];
                for r in 0..n {
                    for rp in 0..n {
                        let d = coupling.delay.between(grid, r, rp);
                        src.point_at(t - d, rp, &mut raw)?;
                        let k = (r * n + rp) * dim;
                        coupling.activation.eval_into(&raw, &mut values[k..k + dim]);
                    }
                }
                Ok(Self {
                    n,
                    dim,
                    per_pair: true,
                    values,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Activation vector seen by the pair `(r, r')`.
    pub fn get(&self, r: usize, rp: usize) -> &[f64] {
        let k = if self.per_pair { r * self.n + rp } else { rp };
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Accumulates `sum_r' weight(r') k(r, r') S(r, r')` into `out`, with `k`
    /// a flat kernel of `rows x dim` blocks.
    pub fn accumulate(&self, kernel: &[f64], rows: usize, grid: &SpatialGrid, out: &mut [f64]) {
        let (n, cols) = (self.n, self.dim);
        let bl = rows * cols;
        for r in 0..n {
            for rp in 0..n {
                let w = grid.weight(rp);
                let b = &kernel[(r * n + rp) * bl..(r * n + rp + 1) * bl];
                let s = self.get(r, rp);
                for a in 0..rows {
                    let mut acc = 0.0;
                    for c in 0..cols {
                        acc += b[a * cols + c] * s[c];
                    }
                    out[r * rows + a] += w * acc;
                }
            }
        }
    }

    /// Writes `scale * e(r)_a S(r, r')_c / tau(r)_a` into the flat kernel `out`.
    pub fn outer_into(&self, e: &[f64], tau: &[f64], scale: f64, out: &mut [f64]) {
        let (n, cols) = (self.n, self.dim);
        let rows = if n == 0 { 0 } else { e.len() / n };
        let bl = rows * cols;
        for r in 0..n {
            for rp in 0..n {
                let s = self.get(r, rp);
                let b = &mut out[(r * n + rp) * bl..(r * n + rp + 1) * bl];
                for a in 0..rows {
                    let f = scale * e[r * rows + a] / tau[r * rows + a];
                    for c in 0..cols {
                        b[a * cols + c] = f * s[c];
                    }
                }
            }
        }
    }
}

/// Sets `out = sum_j int w_ij(r, r') S_ij(src_j(t - d_ij, r')) dr'` using the
/// plant kernels and any sources (true or estimated activity).
pub fn synaptic_drive(
    params: &ModelParams,
    i: usize,
    t: f64,
    sources: [&dyn FieldHistory; 2],
    out: &mut [f64],
) -> Result<(), DelayError> {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, src) in sources.iter().enumerate() {
        if !params.is_active(i, j) {
            continue;
        }
        let c = params.coupling(i, j);
        let act = DelayedActivation::compute(c, &params.grid, *src, t)?;
        act.accumulate(c.kernel.data(), params.dims[i], &params.grid, out);
    }
    Ok(())
}

/// Time-dependent input field of one population, point-major.
pub trait InputField: Send + Sync {
    fn eval_into(&self, t: f64, out: &mut [f64]);
}

impl<F: Fn(f64, &mut [f64]) + Send + Sync> InputField for F {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        self(t, out)
    }
}

pub type SharedInput = Arc<dyn InputField>;

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroInput;

impl InputField for ZeroInput {
    fn eval_into(&self, _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `tau_i dz_i/dt = -z_i + u_i + sum_j int w_ij S_ij(z_j(t - d_ij))`.
pub fn plant_rhs(
    params: &ModelParams,
    t: f64,
    z: [&[f64]; 2],
    history: [&dyn FieldHistory; 2],
    u: [&[f64]; 2],
    dz: [&mut [f64]; 2],
) -> Result<(), DelayError> {
    for (i, out) in dz.into_iter().enumerate() {
        synaptic_drive(params, i, t, history, out)?;
        for (k, o) in out.iter_mut().enumerate() {
            *o = (*o - z[i][k] + u[i][k]) / params.tau[i][k];
        }
    }
    Ok(())
}

/// The open-loop plant driven by given inputs.
pub struct PlantSystem {
    pub params: ModelParams,
    pub inputs: [SharedInput; 2],
    layout: StateLayout,
}

impl PlantSystem {
    pub fn new(params: ModelParams, inputs: [SharedInput; 2]) -> Result<Self, DelayError> {
        params.validate()?;
        let n = params.n_points();
        let layout = StateLayout::builder()
            .field("z1", n, params.dims[0], true)
            .field("z2", n, params.dims[1], true)
            .build();
        Ok(Self { params, inputs, layout })
    }

    pub fn unforced(params: ModelParams) -> Result<Self, DelayError> {
        Self::new(params, [Arc::new(ZeroInput), Arc::new(ZeroInput)])
    }

    /// Flat state with each population constant in space.
    pub fn constant_state(&self, z1: f64, z2: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        y[self.layout.component("z1").range()].fill(z1);
        y[self.layout.component("z2").range()].fill(z2);
        y
    }
}

impl DelaySystem for PlantSystem {
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
        let n = self.params.n_points();
        let [n1, n2] = self.params.dims;
        let c1 = self.layout.component("z1").range();
        let c2 = self.layout.component("z2").range();
        let h1 = past.field(c1.start, n, n1);
        let h2 = past.field(c2.start, n, n2);
        let mut u1 = vec![0.0; c1.len()];
        let mut u2 = vec![0.0; c2.len()];
        self.inputs[0].eval_into(t, &mut u1);
        self.inputs[1].eval_into(t, &mut u2);
        let (d1, d2) = dy.split_at_mut(c2.start);
        plant_rhs(
            &self.params,
            t,
            [&y[c1.clone()], &y[c2.clone()]],
            [&h1, &h2],
            [&u1, &u2],
            [&mut d1[c1], &mut d2[..c2.len()]],
        )
    }

    fn metric_names(&self) -> Vec<String> {
        vec!["norm_z1".into(), "norm_z2".into()]
    }

    fn metrics(&self, _t: f64, y: &[f64], _past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let g = &self.params.grid;
        out.push(weighted_l2_norm(self.layout.slice(y, "z1"), self.params.dims[0], g));
        out.push(weighted_l2_norm(self.layout.slice(y, "z2"), self.params.dims[1], g));
        Ok(())
    }
}

/// Upper bounds on `||z_i(t)||` from the energy estimate
/// `(tau_min / 2) d||z_i||^2/dt <= -||z_i||^2 / 2 + ||u_i||^2 + sum_j S_ij^2 mu(Omega) ||w_ij||^2`,
/// that is `||z_i||^2 <= max(||z_i(0)||^2, 2 K_i)`.
///
/// `u_sup[i]` bounds `||u_i(t)||` and `z0[i]` is `sup ||z_i||` over the
/// initial history.
pub fn bibs_bound(params: &ModelParams, u_sup: [f64; 2], z0: [f64; 2]) -> [f64; 2] {
    let measure = params.grid.domain_measure();
    let mut out = [0.0; 2];
    for i in 0..2 {
        let mut k = u_sup[i] * u_sup[i];
        for j in 0..2 {
            if !params.is_active(i, j) {
                continue;
            }
            let c = params.coupling(i, j);
            let s = c.activation.bound(params.dims[j]);
            let w = l2_opnorm(&c.kernel, &params.grid);
            k += s * s * measure * w * w;
        }
        out[i] = (z0[i] * z0[i]).max(2.0 * k).sqrt();
    }
    out
}
