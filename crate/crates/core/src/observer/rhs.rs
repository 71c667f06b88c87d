use crate::delay::{synaptic_drive, DelayError, DelayedActivation, FieldHistory, ModelParams, SumView};

/// Current observer estimates as flat slices.
pub struct ObserverSlices<'a> {
    pub zhat1: &'a [f64],
    pub zhat2: &'a [f64],
    pub what11: &'a [f64],
    pub what12: &'a [f64],
}

/// Measurements available to the observer at time `t`.
pub struct ObserverInputs<'a> {
    pub z1: &'a [f64],
    pub z1_past: &'a dyn FieldHistory,
    pub zhat2_past: &'a dyn FieldHistory,
    pub u1: &'a [f64],
    pub u2: &'a [f64],
}

pub struct ObserverRates<'a> {
    pub zhat1: &'a mut [f64],
    pub zhat2: &'a mut [f64],
    pub what11: &'a mut [f64],
    pub what12: &'a mut [f64],
}

/// Right-hand side of the adaptive observer:
///
/// ```text
/// tau1 zhat1' = -alpha (zhat1 - z1) - z1 + u1 + int what11 S11(z1(t-d)) + int what12 S12(zhat2(t-d))
/// tau2 zhat2' = -zhat2 + u2 + int w21 S21(z1(t-d)) + int w22 S22(zhat2(t-d))
/// tau1 what1j' = -(zhat1 - z1) S1j(.)^T
/// ```
pub fn observer_rhs(
    params: &ModelParams,
    t: f64,
    est: &ObserverSlices<'_>,
    inp: &ObserverInputs<'_>,
    out: ObserverRates<'_>,
) -> Result<(), DelayError> {
    let g = &params.grid;
    let n1 = params.dims[0];
    let tau1 = &params.tau[0];
    let innovation: Vec<f64> = est.zhat1.iter().zip(inp.z1).map(|(a, b)| a - b).collect();

    out.zhat1.iter_mut().for_each(|v| *v = 0.0);
    if params.is_active(0, 0) {
        let a11 = DelayedActivation::compute(params.coupling(0, 0), g, inp.z1_past, t)?;
        a11.accumulate(est.what11, n1, g, out.zhat1);
        a11.outer_into(&innovation, tau1, -1.0, out.what11);
    }
    if params.is_active(0, 1) {
        let a12 = DelayedActivation::compute(params.coupling(0, 1), g, inp.zhat2_past, t)?;
        a12.accumulate(est.what12, n1, g, out.zhat1);
        a12.outer_into(&innovation, tau1, -1.0, out.what12);
    }
    for k in 0..out.zhat1.len() {
        out.zhat1[k] = (out.zhat1[k] - params.alpha * innovation[k] - inp.z1[k] + inp.u1[k]) / tau1[k];
    }

    if params.dims[1] > 0 {
        synaptic_drive(params, 1, t, [inp.z1_past, inp.zhat2_past], out.zhat2)?;
        for k in 0..out.zhat2.len() {
            out.zhat2[k] = (out.zhat2[k] - est.zhat2[k] + inp.u2[k]) / params.tau[1][k];
        }
    }
    Ok(())
}

/// Current error state.
pub struct ErrorSlices<'a> {
    pub ztilde1: &'a [f64],
    pub ztilde2: &'a [f64],
    pub wtilde11: &'a [f64],
    pub wtilde12: &'a [f64],
}

/// Plant trajectory driving the error system.
pub struct ErrorInputs<'a> {
    pub z1_past: &'a dyn FieldHistory,
    pub z2_past: &'a dyn FieldHistory,
    pub ztilde2_past: &'a dyn FieldHistory,
}

pub struct ErrorRates<'a> {
    pub ztilde1: &'a mut [f64],
    pub ztilde2: &'a mut [f64],
    pub wtilde11: &'a mut [f64],
    pub wtilde12: &'a mut [f64],
}

/// Error dynamics with `zhat2 = z2 + ztilde2`:
///
/// ```text
/// tau1 zt1' = -alpha zt1 + int wt11 S11(z1(t-d)) + int wt12 S12(zhat2(t-d))
///             + int w12 (S12(zhat2(t-d)) - S12(z2(t-d)))
/// tau2 zt2' = -zt2 + int w22 (S22(zhat2(t-d)) - S22(z2(t-d)))
/// tau1 wt1j' = -zt1 S1j(.)^T
/// ```
pub fn error_rhs(
    params: &ModelParams,
    t: f64,
    err: &ErrorSlices<'_>,
    inp: &ErrorInputs<'_>,
    out: ErrorRates<'_>,
) -> Result<(), DelayError> {
    let g = &params.grid;
    let [n1, n2] = params.dims;
    let tau1 = &params.tau[0];
    let zhat2 = SumView {
        a: inp.z2_past,
        b: inp.ztilde2_past,
    };

    out.ztilde1.iter_mut().for_each(|v| *v = 0.0);
    if params.is_active(0, 0) {
        let a11 = DelayedActivation::compute(params.coupling(0, 0), g, inp.z1_past, t)?;
        a11.accumulate(err.wtilde11, n1, g, out.ztilde1);
        a11.outer_into(err.ztilde1, tau1, -1.0, out.wtilde11);
    }
    if params.is_active(0, 1) {
        let c = params.coupling(0, 1);
        let hat = DelayedActivation::compute(c, g, &zhat2, t)?;
        let tru = DelayedActivation::compute(c, g, inp.z2_past, t)?;
        hat.accumulate(err.wtilde12, n1, g, out.ztilde1);
        let mut mismatch = vec![0.0; out.ztilde1.len()];
        hat.accumulate(c.kernel.data(), n1, g, &mut mismatch);
        let mut base = vec![0.0; out.ztilde1.len()];
        tru.accumulate(c.kernel.data(), n1, g, &mut base);
        for k in 0..mismatch.len() {
            out.ztilde1[k] += mismatch[k] - base[k];
        }
        hat.outer_into(err.ztilde1, tau1, -1.0, out.wtilde12);
    }
    for k in 0..out.ztilde1.len() {
        out.ztilde1[k] = (out.ztilde1[k] - params.alpha * err.ztilde1[k]) / tau1[k];
    }

    if n2 > 0 {
        let mut hat = vec![0.0; out.ztilde2.len()];
        let mut tru = vec![0.0; out.ztilde2.len()];
        if params.is_active(1, 1) {
            let c = params.coupling(1, 1);
            DelayedActivation::compute(c, g, &zhat2, t)?.accumulate(c.kernel.data(), n2, g, &mut hat);
            DelayedActivation::compute(c, g, inp.z2_past, t)?.accumulate(c.kernel.data(), n2, g, &mut tru);
        }
        for k in 0..out.ztilde2.len() {
            out.ztilde2[k] = (hat[k] - tru[k] - err.ztilde2[k]) / params.tau[1][k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{Coupling, DelaySpec};
    use crate::field::{build_grid, ActivationSpec, KernelField, MeasureKind};

    /// Field that is constant in time.
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

    fn scalar(w: [f64; 4], tau: [f64; 2], alpha: f64) -> ModelParams {
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
            zref1: vec![0.0],
            mu: 0.0,
            lambda: [0.0; 2],
            grid,
        }
    }

    #[test]
    fn scalar_observer_matches_hand_formula() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.5, 0.8], 3.0);
        let (z1, z1d, zh1, zh2, zh2d, wh11, wh12, u1, u2) = (0.3, -0.6, 0.9, 0.25, 0.55, 0.1, -0.4, 2.0, -1.0);
        let (mut a, mut b, mut c, mut d) = ([0.0], [0.0], [0.0], [0.0]);
        observer_rhs(
            &p,
            1.0,
            &ObserverSlices {
                zhat1: &[zh1],
                zhat2: &[zh2],
                what11: &[wh11],
                what12: &[wh12],
            },
            &ObserverInputs {
                z1: &[z1],
                z1_past: &Frozen(vec![z1d]),
                zhat2_past: &Frozen(vec![zh2d]),
                u1: &[u1],
                u2: &[u2],
            },
            ObserverRates {
                zhat1: &mut a,
                zhat2: &mut b,
                what11: &mut c,
                what12: &mut d,
            },
        )
        .unwrap();
        let f: fn(f64) -> f64 = f64::tanh;
        let e1 = (-3.0 * (zh1 - z1) - z1 + u1 + wh11 * f(z1d) + wh12 * f(zh2d)) / 1.5;
        let e2 = (-zh2 + u2 + 0.4 * f(z1d) + 0.2 * f(zh2d)) / 0.8;
        let e3 = -(zh1 - z1) * f(z1d) / 1.5;
        let e4 = -(zh1 - z1) * f(zh2d) / 1.5;
        for (got, want) in [(a[0], e1), (b[0], e2), (c[0], e3), (d[0], e4)] {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn no_innovation_means_no_adaptation() {
        let p = scalar([0.7, -1.3, 0.4, 0.2], [1.0, 1.0], 3.0);
        let (mut a, mut b, mut c, mut d) = ([0.0], [0.0], [9.0], [9.0]);
        observer_rhs(
            &p,
            0.0,
            &ObserverSlices {
                zhat1: &[0.3],
                zhat2: &[0.1],
                what11: &[0.5],
                what12: &[0.5],
            },
            &ObserverInputs {
                z1: &[0.3],
                z1_past: &Frozen(vec![1.0]),
                zhat2_past: &Frozen(vec![-1.0]),
                u1: &[0.0],
                u2: &[0.0],
            },
            ObserverRates {
                zhat1: &mut a,
                zhat2: &mut b,
                what11: &mut c,
                what12: &mut d,
            },
        )
        .unwrap();
        assert_eq!((c[0], d[0]), (0.0, 0.0));
    }

    #[test]
    fn error_origin_is_an_equilibrium() {
        let p = ModelParams::table1(build_grid(8, MeasureKind::Lebesgue).unwrap()).unwrap();
        let zero = vec![0.0; 8];
        let wz = vec![0.0; 64];
        let z1 = Frozen((0..8).map(|k| (k as f64).sin()).collect());
        let z2 = Frozen((0..8).map(|k| (k as f64).cos()).collect());
        let zt2 = Frozen(zero.clone());
        let (mut a, mut b, mut c, mut d) = (vec![1.0; 8], vec![1.0; 8], vec![1.0; 64], vec![1.0; 64]);
        error_rhs(
            &p,
            0.0,
            &ErrorSlices {
                ztilde1: &zero,
                ztilde2: &zero,
                wtilde11: &wz,
                wtilde12: &wz,
            },
            &ErrorInputs {
                z1_past: &z1,
                z2_past: &z2,
                ztilde2_past: &zt2,
            },
            ErrorRates {
                ztilde1: &mut a,
                ztilde2: &mut b,
                wtilde11: &mut c,
                wtilde12: &mut d,
            },
        )
        .unwrap();
        assert!(a.iter().chain(&b).chain(&c).chain(&d).all(|v| *v == 0.0));
    }
}
