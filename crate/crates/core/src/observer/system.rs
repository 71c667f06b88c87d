use std::sync::Arc;

use super::rhs::{error_rhs, observer_rhs, ErrorInputs, ErrorRates, ErrorSlices, ObserverInputs, ObserverRates, ObserverSlices};
use super::{alpha_star, ErrorCoordinates, Weighting};
use crate::delay::{
    plant_rhs, DelayError, DelaySystem, ModelParams, Past, SharedInput, StateLayout, ZeroInput,
};
use crate::field::{hs_norm, kernel_compose, weighted_l2_norm, KernelField};
use crate::Result;

/// Names of the metrics recorded by [`ObserverSystem`] and [`ErrorSystem`].
pub const ERROR_METRICS: [&str; 8] = [
    "norm_z1",
    "norm_z2",
    "err_z1",
    "err_z2",
    "err_w11",
    "err_w12",
    "err_w11_rho",
    "err_w12_rho",
];

fn layout_for(params: &ModelParams, second: &str, first: &str, k11: &str, k12: &str) -> StateLayout {
    let n = params.n_points();
    let [n1, n2] = params.dims;
    StateLayout::builder()
        .field("z1", n, n1, true)
        .field("z2", n, n2, true)
        .field(second, n, n2, true)
        .field(first, n, n1, false)
        .kernel(k11, n, n1, params.coupling(0, 0).kernel.col_dim())
        .kernel(k12, n, n1, params.coupling(0, 1).kernel.col_dim())
        .build()
}

fn weighted_norm(w: &[f64], norm: f64, rho: Option<&KernelField>, params: &ModelParams, rows: usize) -> f64 {
    match rho {
        None => norm,
        Some(r) => {
            let n = params.n_points();
            let cols = if n == 0 || rows == 0 { 0 } else { w.len() / (n * n * rows) };
            match KernelField::new(n, rows, cols, w.to_vec()).and_then(|k| kernel_compose(&k, r, &params.grid)) {
                Ok(c) => hs_norm(&c, &params.grid),
                Err(_) => f64::NAN,
            }
        }
    }
}

fn push_error_metrics(
    params: &ModelParams,
    rho: &Weighting,
    z: [&[f64]; 2],
    parts: &[Vec<f64>; 4],
    out: &mut Vec<f64>,
) {
    let g = &params.grid;
    let [n1, n2] = params.dims;
    out.push(weighted_l2_norm(z[0], n1, g));
    out.push(weighted_l2_norm(z[1], n2, g));
    out.push(weighted_l2_norm(&parts[0], n1, g));
    out.push(weighted_l2_norm(&parts[1], n2, g));
    let w11 = flat_hs(&parts[2], params);
    let w12 = flat_hs(&parts[3], params);
    out.push(w11);
    out.push(w12);
    out.push(weighted_norm(&parts[2], w11, rho.rho1.as_ref(), params, n1));
    out.push(weighted_norm(&parts[3], w12, rho.rho2.as_ref(), params, n1));
}

/// Hilbert-Schmidt norm of a flat kernel with uniform point weights.
pub(crate) fn flat_hs(w: &[f64], params: &ModelParams) -> f64 {
    let g = &params.grid;
    let n = g.len();
    if w.is_empty() {
        return 0.0;
    }
    let bl = w.len() / (n * n);
    let mut acc = 0.0;
    for r in 0..n {
        for rp in 0..n {
            let s: f64 = w[(r * n + rp) * bl..(r * n + rp + 1) * bl].iter().map(|v| v * v).sum();
            acc += g.weight(r) * g.weight(rp) * s;
        }
    }
    acc.sqrt()
}

/// Plant together with the adaptive observer, both driven by the same inputs.
pub struct ObserverSystem {
    pub params: ModelParams,
    pub inputs: [SharedInput; 2],
    pub rho: Weighting,
    layout: StateLayout,
}

impl ObserverSystem {
    pub fn new(params: ModelParams, inputs: [SharedInput; 2]) -> Result<Self> {
        params.validate()?;
        let layout = layout_for(&params, "zhat2", "zhat1", "what11", "what12");
        Ok(Self {
            params,
            inputs,
            rho: Weighting::default(),
            layout,
        })
    }

    pub fn unforced(params: ModelParams) -> Result<Self> {
        Self::new(params, [Arc::new(ZeroInput), Arc::new(ZeroInput)])
    }

    /// Warning text when the gain is at or below the threshold of the
    /// convergence guarantee.
    pub fn gain_warning(&self) -> Option<String> {
        match alpha_star(&self.params) {
            Ok(a) if self.params.alpha <= a => Some(format!(
                "observer gain {} does not exceed the threshold {a}; convergence is not guaranteed",
                self.params.alpha
            )),
            Ok(_) => None,
            Err(e) => Some(e.to_string()),
        }
    }

    /// Flat state with spatially constant plant and observer values and
    /// zero kernel estimates.
    pub fn initial_state(&self, z1: f64, z2: f64, zhat1: f64, zhat2: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        for (name, v) in [("z1", z1), ("z2", z2), ("zhat1", zhat1), ("zhat2", zhat2)] {
            y[self.layout.component(name).range()].fill(v);
        }
        y
    }

    /// Sets the kernel estimates to the true kernels.
    pub fn with_exact_kernels(&self, mut y: Vec<f64>) -> Vec<f64> {
        y[self.layout.component("what11").range()].copy_from_slice(self.params.coupling(0, 0).kernel.data());
        y[self.layout.component("what12").range()].copy_from_slice(self.params.coupling(0, 1).kernel.data());
        y
    }
}

impl DelaySystem for ObserverSystem {
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
        let h1 = past.field(l.component("z1").offset, n, n1);
        let h2 = past.field(l.component("z2").offset, n, n2);
        let hh2 = past.field(l.component("zhat2").offset, n, n2);
        let mut u1 = vec![0.0; n * n1];
        let mut u2 = vec![0.0; n * n2];
        self.inputs[0].eval_into(t, &mut u1);
        self.inputs[1].eval_into(t, &mut u2);
        let z1 = l.slice(y, "z1");
        let z2 = l.slice(y, "z2");
        let [dz1, dz2, dzh1, dzh2, dw11, dw12] = l.split_mut(dy, ["z1", "z2", "zhat1", "zhat2", "what11", "what12"]);
        plant_rhs(p, t, [z1, z2], [&h1, &h2], [&u1, &u2], [dz1, dz2])?;
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
                z1,
                z1_past: &h1,
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
        ERROR_METRICS.iter().map(|s| s.to_string()).collect()
    }

    fn metrics(&self, _t: f64, y: &[f64], _past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let l = &self.layout;
        push_error_metrics(
            &self.params,
            &self.rho,
            [l.slice(y, "z1"), l.slice(y, "z2")],
            &self.error_parts(y),
            out,
        );
        Ok(())
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl ErrorCoordinates for ObserverSystem {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn error_parts(&self, y: &[f64]) -> [Vec<f64>; 4] {
        let l = &self.layout;
        [
            diff(l.slice(y, "zhat1"), l.slice(y, "z1")),
            diff(l.slice(y, "zhat2"), l.slice(y, "z2")),
            diff(l.slice(y, "what11"), self.params.coupling(0, 0).kernel.data()),
            diff(l.slice(y, "what12"), self.params.coupling(0, 1).kernel.data()),
        ]
    }

    fn ztilde2_from_history(&self, row: &[f64]) -> Vec<f64> {
        diff(&row[self.layout.component("zhat2").range()], &row[self.layout.component("z2").range()])
    }
}

/// Plant together with the estimation-error dynamics it drives.
pub struct ErrorSystem {
    pub params: ModelParams,
    pub inputs: [SharedInput; 2],
    pub rho: Weighting,
    layout: StateLayout,
}

impl ErrorSystem {
    pub fn new(params: ModelParams, inputs: [SharedInput; 2]) -> Result<Self> {
        params.validate()?;
        let layout = layout_for(&params, "ztilde2", "ztilde1", "wtilde11", "wtilde12");
        Ok(Self {
            params,
            inputs,
            rho: Weighting::default(),
            layout,
        })
    }

    /// Error coordinates of an [`ObserverSystem`] state.
    pub fn from_observer_state(&self, obs: &ObserverSystem, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.len()];
        let parts = obs.error_parts(y);
        let l = &self.layout;
        out[l.component("z1").range()].copy_from_slice(obs.layout().slice(y, "z1"));
        out[l.component("z2").range()].copy_from_slice(obs.layout().slice(y, "z2"));
        for (name, v) in ["ztilde1", "ztilde2", "wtilde11", "wtilde12"].iter().zip(&parts) {
            out[l.component(name).range()].copy_from_slice(v);
        }
        out
    }
}

impl DelaySystem for ErrorSystem {
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
        let h1 = past.field(l.component("z1").offset, n, n1);
        let h2 = past.field(l.component("z2").offset, n, n2);
        let ht2 = past.field(l.component("ztilde2").offset, n, n2);
        let mut u1 = vec![0.0; n * n1];
        let mut u2 = vec![0.0; n * n2];
        self.inputs[0].eval_into(t, &mut u1);
        self.inputs[1].eval_into(t, &mut u2);
        let [dz1, dz2, dzt1, dzt2, dw11, dw12] =
            l.split_mut(dy, ["z1", "z2", "ztilde1", "ztilde2", "wtilde11", "wtilde12"]);
        plant_rhs(p, t, [l.slice(y, "z1"), l.slice(y, "z2")], [&h1, &h2], [&u1, &u2], [dz1, dz2])?;
        error_rhs(
            p,
            t,
            &ErrorSlices {
                ztilde1: l.slice(y, "ztilde1"),
                ztilde2: l.slice(y, "ztilde2"),
                wtilde11: l.slice(y, "wtilde11"),
                wtilde12: l.slice(y, "wtilde12"),
            },
            &ErrorInputs {
                z1_past: &h1,
                z2_past: &h2,
                ztilde2_past: &ht2,
            },
            ErrorRates {
                ztilde1: dzt1,
                ztilde2: dzt2,
                wtilde11: dw11,
                wtilde12: dw12,
            },
        )
    }

    fn metric_names(&self) -> Vec<String> {
        ERROR_METRICS.iter().map(|s| s.to_string()).collect()
    }

    fn metrics(&self, _t: f64, y: &[f64], _past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let l = &self.layout;
        push_error_metrics(
            &self.params,
            &self.rho,
            [l.slice(y, "z1"), l.slice(y, "z2")],
            &self.error_parts(y),
            out,
        );
        Ok(())
    }
}

impl ErrorCoordinates for ErrorSystem {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn error_parts(&self, y: &[f64]) -> [Vec<f64>; 4] {
        let l = &self.layout;
        ["ztilde1", "ztilde2", "wtilde11", "wtilde12"].map(|n| l.slice(y, n).to_vec())
    }

    fn ztilde2_from_history(&self, row: &[f64]) -> Vec<f64> {
        row[self.layout.component("ztilde2").range()].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{integrate, HistoryBuffer, IntegrateOptions, Interp, SimState};
    use crate::field::{build_grid, MeasureKind};

    fn small() -> ModelParams {
        let mut p = ModelParams::table1(build_grid(6, MeasureKind::Lebesgue).unwrap()).unwrap();
        p.alpha = 10.0;
        p
    }

    #[test]
    fn exact_initialization_is_an_equilibrium_of_the_error() {
        let sys = ObserverSystem::unforced(small()).unwrap();
        let y = sys.with_exact_kernels(sys.initial_state(0.7, -0.2, 0.7, -0.2));
        let h = HistoryBuffer::constant(&y[..sys.layout().history_width()], 0.0, 0.1, 1e-3, Interp::CubicHermite);
        let mut dy = vec![0.0; y.len()];
        sys.rhs(0.0, &y, &Past::new(&h, 0.0, &y), &mut dy).unwrap();
        let l = sys.layout();
        for (a, b) in [("zhat1", "z1"), ("zhat2", "z2")] {
            for (x, y) in l.slice(&dy, a).iter().zip(l.slice(&dy, b)) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        assert!(l.slice(&dy, "what11").iter().chain(l.slice(&dy, "what12")).all(|v| *v == 0.0));
    }

    #[test]
    fn error_system_tracks_observer_differences() {
        let p = small();
        let obs = ObserverSystem::unforced(p.clone()).unwrap();
        let err = ErrorSystem::new(p, obs.inputs.clone()).unwrap();
        let y0 = obs.initial_state(1.0, 1.0, 1.0, 0.0);
        let e0 = err.from_observer_state(&obs, &y0);
        let opts = IntegrateOptions {
            t_end: 0.5,
            stride: 50,
            ..Default::default()
        };
        let mut so = SimState::with_constant_history(&obs, 0.0, y0, 1e-3, Interp::CubicHermite).unwrap();
        let mut se = SimState::with_constant_history(&err, 0.0, e0, 1e-3, Interp::CubicHermite).unwrap();
        let to = integrate(&obs, &mut so, &opts, &mut []).unwrap();
        let te = integrate(&err, &mut se, &opts, &mut []).unwrap();
        for (a, b) in to.metrics.iter().zip(&te.metrics) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
