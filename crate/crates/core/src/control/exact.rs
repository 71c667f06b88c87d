use super::zref::solve_zref2;
use crate::delay::{
    plant_rhs, synaptic_drive, DelayError, DelaySystem, DelayedActivation, FieldHistory, ModelParams, Past,
    StateLayout,
};
use crate::field::weighted_l2_norm;
use crate::observer::{flat_hs, ErrorCoordinates, Weighting};
use crate::Result;

/// Measurements and estimates the exact controller reads.
pub struct ExactInputs<'a> {
    pub z1: &'a [f64],
    pub z1_past: &'a dyn FieldHistory,
    pub zhat2_past: &'a dyn FieldHistory,
    pub what11: &'a [f64],
    pub what12: &'a [f64],
}

/// ```text
/// u1 = -alpha (z1 - zref1) + z1 - int what11 S11(z1(t-d)) - int what12 S12(zhat2(t-d))
/// u2 = 0
/// ```
pub fn control_exact(
    params: &ModelParams,
    t: f64,
    inp: &ExactInputs<'_>,
    u1: &mut [f64],
    u2: &mut [f64],
) -> Result<(), DelayError> {
    let g = &params.grid;
    let n1 = params.dims[0];
    let mut drive = vec![0.0; u1.len()];
    if params.is_active(0, 0) {
        DelayedActivation::compute(params.coupling(0, 0), g, inp.z1_past, t)?.accumulate(inp.what11, n1, g, &mut drive);
    }
    if params.is_active(0, 1) {
        DelayedActivation::compute(params.coupling(0, 1), g, inp.zhat2_past, t)?.accumulate(
            inp.what12,
            n1,
            g,
            &mut drive,
        );
    }
    for k in 0..u1.len() {
        u1[k] = -params.alpha * (inp.z1[k] - params.zref1[k]) + inp.z1[k] - drive[k];
    }
    u2.fill(0.0);
    Ok(())
}

pub struct ReducedSlices<'a> {
    pub zhat2: &'a [f64],
}

pub struct ReducedInputs<'a> {
    pub z1: &'a [f64],
    pub z1_past: &'a dyn FieldHistory,
    pub zhat2_past: &'a dyn FieldHistory,
}

pub struct ReducedRates<'a> {
    pub zhat2: &'a mut [f64],
    pub what11: &'a mut [f64],
    pub what12: &'a mut [f64],
}

/// Observer of the stabilizing loop, with `zhat1` pinned to `zref1`:
///
/// ```text
/// tau2 zhat2' = -zhat2 + int w21 S21(z1(t-d)) + int w22 S22(zhat2(t-d))
/// tau1 what1j' = (z1 - zref1) S1j(.)^T
/// ```
pub fn reduced_observer_rhs(
    params: &ModelParams,
    t: f64,
    est: &ReducedSlices<'_>,
    inp: &ReducedInputs<'_>,
    out: ReducedRates<'_>,
) -> Result<(), DelayError> {
    let g = &params.grid;
    let dev: Vec<f64> = inp.z1.iter().zip(&params.zref1).map(|(a, b)| a - b).collect();
    if params.is_active(0, 0) {
        DelayedActivation::compute(params.coupling(0, 0), g, inp.z1_past, t)?.outer_into(
            &dev,
            &params.tau[0],
            1.0,
            out.what11,
        );
    }
    if params.is_active(0, 1) {
        DelayedActivation::compute(params.coupling(0, 1), g, inp.zhat2_past, t)?.outer_into(
            &dev,
            &params.tau[0],
            1.0,
            out.what12,
        );
    }
    if params.dims[1] > 0 {
        synaptic_drive(params, 1, t, [inp.z1_past, inp.zhat2_past], out.zhat2)?;
        for k in 0..out.zhat2.len() {
            out.zhat2[k] = (out.zhat2[k] - est.zhat2[k]) / params.tau[1][k];
        }
    }
    Ok(())
}

pub const EXACT_METRICS: [&str; 8] = [
    "dev_z1", "dev_z2", "err_z2", "err_w11", "err_w12", "err_w", "norm_u1", "norm_z1",
];

/// Plant in closed loop with the exact stabilizing controller and its
/// reduced observer. `perturbation` is added uniformly to `u1`.
pub struct ExactLoop {
    pub params: ModelParams,
    pub zref2: Vec<f64>,
    pub perturbation: f64,
    pub rho: Weighting,
    layout: StateLayout,
}

impl ExactLoop {
    pub fn new(params: ModelParams) -> Result<Self> {
        let zref2 = solve_zref2(&params)?.zref2;
        let n = params.n_points();
        let [n1, n2] = params.dims;
        let layout = StateLayout::builder()
            .field("z1", n, n1, true)
            .field("z2", n, n2, true)
            .field("zhat2", n, n2, true)
            .kernel("what11", n, n1, params.coupling(0, 0).kernel.col_dim())
            .kernel("what12", n, n1, params.coupling(0, 1).kernel.col_dim())
            .build();
        Ok(Self {
            params,
            zref2,
            perturbation: 0.0,
            rho: Weighting::default(),
            layout,
        })
    }

    pub fn with_perturbation(mut self, p: f64) -> Self {
        self.perturbation = p;
        self
    }

    /// Spatially constant activities and zero kernel estimates.
    pub fn initial_state(&self, z1: f64, z2: f64, zhat2: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.len()];
        for (name, v) in [("z1", z1), ("z2", z2), ("zhat2", zhat2)] {
            y[self.layout.component(name).range()].fill(v);
        }
        y
    }

    /// Applied `u1`, perturbation included.
    pub fn control(&self, t: f64, y: &[f64], past: &Past<'_>, u1: &mut [f64]) -> Result<(), DelayError> {
        let p = &self.params;
        let n = p.n_points();
        let [n1, n2] = p.dims;
        let l = &self.layout;
        let h1 = past.field(l.component("z1").offset, n, n1);
        let hh2 = past.field(l.component("zhat2").offset, n, n2);
        control_exact(
            p,
            t,
            &ExactInputs {
                z1: l.slice(y, "z1"),
                z1_past: &h1,
                zhat2_past: &hh2,
                what11: l.slice(y, "what11"),
                what12: l.slice(y, "what12"),
            },
            u1,
            &mut [],
        )?;
        u1.iter_mut().for_each(|v| *v += self.perturbation);
        Ok(())
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl DelaySystem for ExactLoop {
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
        let u2 = vec![0.0; n * n2];
        self.control(t, y, past, &mut u1)?;
        let z1 = l.slice(y, "z1");
        let [dz1, dz2, dzh2, dw11, dw12] = l.split_mut(dy, ["z1", "z2", "zhat2", "what11", "what12"]);
        plant_rhs(p, t, [z1, l.slice(y, "z2")], [&h1, &h2], [&u1, &u2], [dz1, dz2])?;
        reduced_observer_rhs(
            p,
            t,
            &ReducedSlices {
                zhat2: l.slice(y, "zhat2"),
            },
            &ReducedInputs {
                z1,
                z1_past: &h1,
                zhat2_past: &hh2,
            },
            ReducedRates {
                zhat2: dzh2,
                what11: dw11,
                what12: dw12,
            },
        )
    }

    fn metric_names(&self) -> Vec<String> {
        EXACT_METRICS.iter().map(|s| s.to_string()).collect()
    }

    fn metrics(&self, t: f64, y: &[f64], past: &Past<'_>, out: &mut Vec<f64>) -> Result<(), DelayError> {
        let p = &self.params;
        let g = &p.grid;
        let [n1, n2] = p.dims;
        let l = &self.layout;
        let [zt1, zt2, wt11, wt12] = self.error_parts(y);
        let w11 = flat_hs(&wt11, p);
        let w12 = flat_hs(&wt12, p);
        let mut u1 = vec![0.0; zt1.len()];
        self.control(t, y, past, &mut u1)?;
        out.push(weighted_l2_norm(&zt1, n1, g));
        out.push(weighted_l2_norm(&diff(l.slice(y, "z2"), &self.zref2), n2, g));
        out.push(weighted_l2_norm(&zt2, n2, g));
        out.push(w11);
        out.push(w12);
        out.push(w11.hypot(w12));
        out.push(weighted_l2_norm(&u1, n1, g));
        out.push(weighted_l2_norm(l.slice(y, "z1"), n1, g));
        Ok(())
    }
}

impl ErrorCoordinates for ExactLoop {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `(zref1 - z1, zhat2 - z2, what11 - w11, what12 - w12)`.
    fn error_parts(&self, y: &[f64]) -> [Vec<f64>; 4] {
        let l = &self.layout;
        [
            diff(&self.params.zref1, l.slice(y, "z1")),
            diff(l.slice(y, "zhat2"), l.slice(y, "z2")),
            diff(l.slice(y, "what11"), self.params.coupling(0, 0).kernel.data()),
            diff(l.slice(y, "what12"), self.params.coupling(0, 1).kernel.data()),
        ]
    }

    fn ztilde2_from_history(&self, row: &[f64]) -> Vec<f64> {
        diff(&row[self.layout.component("zhat2").range()], &row[self.layout.component("z2").range()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{integrate, Coupling, DelaySpec, HistoryBuffer, IntegrateOptions, Interp, SimState};
    use crate::field::{build_grid, ActivationSpec, KernelField, MeasureKind};
    use crate::observer::{error_rhs, ErrorInputs, ErrorRates, ErrorSlices};

    struct Frozen(Vec<f64>);

    impl FieldHistory for Frozen {
        fn n_points(&self) -> usize {
            self.0.len()
        }
        fn dim(&self) -> usize {
            1
        }
        fn field_at(&self, _t: f64, out: &mut [f64]) -> Result<(), DelayError> {
            out.copy_from_slice(&self.0);
            Ok(())
        }
        fn point_at(&self, _t: f64, p: usize, out: &mut [f64]) -> Result<(), DelayError> {
            out[0] = self.0[p];
            Ok(())
        }
    }

    fn scalar(w: [f64; 4], tau: [f64; 2], alpha: f64, zref: f64) -> ModelParams {
        let grid = build_grid(1, MeasureKind::Counting).unwrap();
        let c = |v: f64| Coupling {
            kernel: KernelField::new(1, 1, 1, vec![v]).unwrap(),
            activation: ActivationSpec::Tanh,
            delay: DelaySpec::Constant { delay: 0.1 },
        };
        ModelParams {
            dims: [1, 1],
            tau: [vec![tau[0]], vec![tau[1]]],
            couplings: [[c(w[0]), c(w[1])], [c(w[2]), c(w[3])]],
            alpha,
            zref1: vec![zref],
            mu: 0.0,
            lambda: [0.0; 2],
            grid,
        }
    }

    fn u1_of(p: &ModelParams, z1: f64, z1d: f64, zh2d: f64, wh: [f64; 2]) -> f64 {
        let mut u1 = [0.0];
        let mut u2 = [7.0];
        control_exact(
            p,
            0.0,
            &ExactInputs {
                z1: &[z1],
                z1_past: &Frozen(vec![z1d]),
                zhat2_past: &Frozen(vec![zh2d]),
                what11: &[wh[0]],
                what12: &[wh[1]],
            },
            &mut u1,
            &mut u2,
        )
        .unwrap();
        assert_eq!(u2[0], 0.0);
        u1[0]
    }

    #[test]
    fn scalar_control_matches_hand_formula() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.5, 0.8], 3.0, 0.25);
        let (z1, z1d, zh2d, w11, w12) = (0.3, -0.6, 0.55, 0.1, -0.4);
        let want = -3.0 * (z1 - 0.25) + z1 - w11 * f64::tanh(z1d) - w12 * f64::tanh(zh2d);
        assert!((u1_of(&p, z1, z1d, zh2d, [w11, w12]) - want).abs() < 1e-14);
    }

    #[test]
    fn zero_estimates_give_proportional_control() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.0, 1.0], 5.0, 0.0);
        assert!((u1_of(&p, 0.4, 0.9, -0.3, [0.0, 0.0]) - (-5.0 * 0.4 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn exact_estimates_pin_the_reference() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.0, 1.0], 5.0, 0.2);
        let (z1d, z2d) = (0.35, -0.1);
        let u1 = u1_of(&p, 0.2, z1d, z2d, [0.7, -1.3]);
        let mut dz = ([0.0], [0.0]);
        plant_rhs(
            &p,
            0.0,
            [&[0.2], &[0.0]],
            [&Frozen(vec![z1d]), &Frozen(vec![z2d])],
            [&[u1], &[0.0]],
            [&mut dz.0, &mut dz.1],
        )
        .unwrap();
        assert!(dz.0[0].abs() < 1e-15);
    }

    fn reduced(p: &ModelParams, z1: f64, z1d: f64, zh2: f64, zh2d: f64) -> [f64; 3] {
        let (mut a, mut b, mut c) = ([0.0], [0.0], [0.0]);
        reduced_observer_rhs(
            p,
            0.0,
            &ReducedSlices { zhat2: &[zh2] },
            &ReducedInputs {
                z1: &[z1],
                z1_past: &Frozen(vec![z1d]),
                zhat2_past: &Frozen(vec![zh2d]),
            },
            ReducedRates {
                zhat2: &mut a,
                what11: &mut b,
                what12: &mut c,
            },
        )
        .unwrap();
        [a[0], b[0], c[0]]
    }

    #[test]
    fn scalar_reduced_observer_matches_hand_formula() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.5, 0.8], 3.0, 0.1);
        let (z1, z1d, zh2, zh2d) = (0.3, -0.6, 0.25, 0.55);
        let got = reduced(&p, z1, z1d, zh2, zh2d);
        let want = [
            (-zh2 + 0.4 * f64::tanh(z1d) + 0.2 * f64::tanh(zh2d)) / 0.8,
            (z1 - 0.1) * f64::tanh(z1d) / 1.5,
            (z1 - 0.1) * f64::tanh(zh2d) / 1.5,
        ];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn reference_state_freezes_the_kernels() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.0, 1.0], 3.0, 0.3);
        let got = reduced(&p, 0.3, 0.8, 0.1, -0.5);
        assert_eq!((got[1], got[2]), (0.0, 0.0));
    }

    #[test]
    fn uncoupled_estimate_decays_exponentially() {
        let mut p = scalar([0.7, -1.3, 0.0, 0.0], [1.0, 2.0], 3.0, 0.0);
        p.couplings[1][0].kernel = KernelField::zeros(1, 1, 1);
        let got = reduced(&p, 0.3, 0.8, 0.6, -0.5);
        assert!((got[0] + 0.6 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_law_is_the_observer_law_with_pinned_estimate() {
        // -(zhat1 - z1) S^T with zhat1 = zref1 is (z1 - zref1) S^T.
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.5, 0.8], 3.0, 0.1);
        let (z1, z1d, zh2d) = (0.3, -0.6, 0.55);
        let got = reduced(&p, z1, z1d, 0.0, zh2d);
        let (mut a, mut b, mut c, mut d) = ([0.0], [0.0], [0.0], [0.0]);
        crate::observer::observer_rhs(
            &p,
            0.0,
            &crate::observer::ObserverSlices {
                zhat1: &[0.1],
                zhat2: &[0.0],
                what11: &[0.0],
                what12: &[0.0],
            },
            &crate::observer::ObserverInputs {
                z1: &[z1],
                z1_past: &Frozen(vec![z1d]),
                zhat2_past: &Frozen(vec![zh2d]),
                u1: &[0.0],
                u2: &[0.0],
            },
            crate::observer::ObserverRates {
                zhat1: &mut a,
                zhat2: &mut b,
                what11: &mut c,
                what12: &mut d,
            },
        )
        .unwrap();
        assert!((got[1] - c[0]).abs() < 1e-15 && (got[2] - d[0]).abs() < 1e-15);
    }

    /// Closed loop plus an independent copy of the error coordinates driven
    /// by the loop's plant trajectory.
    struct Coupled {
        inner: ExactLoop,
        layout: StateLayout,
    }

    impl Coupled {
        fn new(inner: ExactLoop) -> Self {
            let p = &inner.params;
            let n = p.n_points();
            let [n1, n2] = p.dims;
            let mut b = StateLayout::builder();
            for c in ["z1", "z2", "zhat2", "ztilde2"] {
                let dim = if c == "z1" { n1 } else { n2 };
                b = b.field(c, n, dim, true);
            }
            let layout = b
                .kernel("what11", n, n1, 1)
                .kernel("what12", n, n1, 1)
                .field("ztilde1", n, n1, false)
                .kernel("wtilde11", n, n1, 1)
                .kernel("wtilde12", n, n1, 1)
                .build();
            Self { inner, layout }
        }
    }

    impl DelaySystem for Coupled {
        fn layout(&self) -> &StateLayout {
            &self.layout
        }
        fn max_delay(&self) -> f64 {
            self.inner.max_delay()
        }
        fn rhs(&self, t: f64, y: &[f64], past: &Past<'_>, dy: &mut [f64]) -> Result<(), DelayError> {
            let il = self.inner.layout();
            let l = &self.layout;
            let names = ["z1", "z2", "zhat2", "what11", "what12"];
            let mut yi = vec![0.0; il.len()];
            for c in names {
                yi[il.component(c).range()].copy_from_slice(l.slice(y, c));
            }
            // the inner loop only reads its delayed prefix, which matches ours
            let mut di = vec![0.0; il.len()];
            self.inner.rhs(t, &yi, past, &mut di)?;
            for c in names {
                dy[l.component(c).range()].copy_from_slice(il.slice(&di, c));
            }
            let p = &self.inner.params;
            let n = p.n_points();
            let h1 = past.field(l.component("z1").offset, n, 1);
            let h2 = past.field(l.component("z2").offset, n, 1);
            let ht2 = past.field(l.component("ztilde2").offset, n, 1);
            let [dzt1, dzt2, dw11, dw12] = l.split_mut(dy, ["ztilde1", "ztilde2", "wtilde11", "wtilde12"]);
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
    }

    #[test]
    fn closed_loop_errors_follow_the_error_system() {
        let mut p = ModelParams::table1(build_grid(6, MeasureKind::Lebesgue).unwrap()).unwrap();
        p.alpha = 10.0;
        let inner = ExactLoop::new(p).unwrap();
        let sys = Coupled::new(inner);
        let l = sys.layout.clone();
        let mut y0 = vec![0.0; l.len()];
        for (c, v) in [("z1", 1.0), ("z2", 1.0), ("zhat2", 0.0), ("ztilde2", -1.0), ("ztilde1", -1.0)] {
            y0[l.component(c).range()].fill(v);
        }
        let w11 = sys.inner.params.coupling(0, 0).kernel.data().to_vec();
        let w12 = sys.inner.params.coupling(0, 1).kernel.data().to_vec();
        y0[l.component("wtilde11").range()].copy_from_slice(&w11.iter().map(|v| -v).collect::<Vec<_>>());
        y0[l.component("wtilde12").range()].copy_from_slice(&w12.iter().map(|v| -v).collect::<Vec<_>>());
        let h = HistoryBuffer::constant(&y0[..l.history_width()], 0.0, 0.1, 1e-3, Interp::CubicHermite);
        let mut state = SimState {
            t0: 0.0,
            step: 0,
            dt: 1e-3,
            y: y0,
            history: h,
            fsal: None,
        };
        let opts = IntegrateOptions {
            t_end: 1.0,
            stride: 100,
            ..Default::default()
        };
        integrate(&sys, &mut state, &opts, &mut []).unwrap();
        let y = &state.y;
        let loop_parts = {
            let mut yi = vec![0.0; sys.inner.layout().len()];
            for c in ["z1", "z2", "zhat2", "what11", "what12"] {
                yi[sys.inner.layout().component(c).range()].copy_from_slice(l.slice(y, c));
            }
            sys.inner.error_parts(&yi)
        };
        for (k, c) in ["ztilde1", "ztilde2", "wtilde11", "wtilde12"].iter().enumerate() {
            for (a, b) in loop_parts[k].iter().zip(l.slice(y, c)) {
                assert!((a - b).abs() < 1e-10, "{c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn table1_loop_converges_to_the_reference() {
        let mut p = ModelParams::table1(build_grid(8, MeasureKind::Lebesgue).unwrap()).unwrap();
        p.alpha = 20.0;
        let sys = ExactLoop::new(p).unwrap();
        let mut st = SimState::with_constant_history(&sys, 0.0, sys.initial_state(1.0, 1.0, 0.0), 1e-3, Interp::CubicHermite)
            .unwrap();
        let tr = integrate(
            &sys,
            &mut st,
            &IntegrateOptions {
                t_end: 8.0,
                stride: 500,
                ..Default::default()
            },
            &mut [],
        )
        .unwrap();
        let d1 = tr.metric("dev_z1").unwrap();
        let d2 = tr.metric("dev_z2").unwrap();
        assert!(*d1.last().unwrap() < 1e-3 && *d2.last().unwrap() < 1e-3);
    }
}
