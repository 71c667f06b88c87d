use serde::Serialize;

use crate::delay::{DelayError, HistoryBuffer, ModelParams, StepObserver};
use crate::field::{spectral_norm, weighted_l2_norm};
use crate::observer::{alpha_star, ErrorCoordinates};
use crate::Result;

/// Constants of the Lyapunov functional of the estimation error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovConstants {
    pub eps1: f64,
    pub eps2: f64,
    /// Per-point weights `gamma_i(r) = (eps_i l_i2^2 / 2) int |w_i2(r, r')|^2 dr'`.
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    /// `alpha - alpha*`.
    pub c1: f64,
    /// `(1 - l22^2 ||w22||^2) / 4`.
    pub c2: f64,
    /// Rate the energy argument actually yields for the second error,
    /// `(1 + a) / 4 - a / (1 + a)` with `a = l22^2 ||w22||^2`.
    pub c2_derived: f64,
}

fn row_energy(params: &ModelParams, i: usize) -> Vec<f64> {
    let g = &params.grid;
    let n = g.len();
    let c = params.coupling(i, 1);
    if !params.is_active(i, 1) {
        return vec![0.0; n];
    }
    let (rows, cols) = (c.kernel.row_dim(), c.kernel.col_dim());
    (0..n)
        .map(|r| {
            (0..n)
                .map(|rp| {
                    let s = spectral_norm(c.kernel.block(r, rp), rows, cols);
                    g.weight(rp) * s * s
                })
                .sum()
        })
        .collect()
}

impl LyapunovConstants {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let alpha_star = alpha_star(params)?;
        let p12 = params.gain_product(0, 1);
        let a = params.gain_product(1, 1).powi(2);
        // Vanishing couplings make the matching gamma vanish whatever eps is.
        let eps1 = if p12 > 0.0 { (1.0 - a) / (p12 * p12) } else { f64::INFINITY };
        let eps2 = if a > 0.0 { (1.0 + a) / (2.0 * a) } else { f64::INFINITY };
        let gamma = |i: usize, eps: f64| -> Vec<f64> {
            let l = params.coupling(i, 1).activation.lipschitz();
            row_energy(params, i)
                .into_iter()
                .map(|e| if e == 0.0 { 0.0 } else { eps * l * l / 2.0 * e })
                .collect()
        };
        Ok(Self {
            eps1,
            eps2,
            gamma1: gamma(0, eps1),
            gamma2: gamma(1, eps2),
            c1: params.alpha - alpha_star,
            c2: (1.0 - a) / 4.0,
            c2_derived: (1.0 + a) / 4.0 - a / (1.0 + a),
        })
    }

    /// The decrease is certified only above the gain threshold.
    pub fn certified(&self) -> bool {
        self.c1 > 0.0 && self.c2 > 0.0
    }
}

/// Terms of the functional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LyapunovValue {
    pub total: f64,
    pub v1z: f64,
    pub v2z: f64,
    pub v1w: f64,
    pub v2w: f64,
    pub w1: f64,
    pub w2: f64,
}

/// Error state: `(ztilde1, ztilde2, wtilde11, wtilde12)`, flat.
pub struct ErrorState<'a> {
    pub ztilde1: &'a [f64],
    pub ztilde2: &'a [f64],
    pub wtilde11: &'a [f64],
    pub wtilde12: &'a [f64],
}

fn quad_tau(x: &[f64], tau: &[f64], dim: usize, params: &ModelParams) -> f64 {
    let g = &params.grid;
    if dim == 0 {
        return 0.0;
    }
    0.5 * x
        .iter()
        .zip(tau)
        .enumerate()
        .map(|(k, (v, t))| g.weight(k / dim) * t * v * v)
        .sum::<f64>()
}

fn kernel_tau(w: &[f64], params: &ModelParams) -> f64 {
    let g = &params.grid;
    let n = g.len();
    let n1 = params.dims[0];
    if w.is_empty() || n1 == 0 {
        return 0.0;
    }
    let bl = w.len() / (n * n);
    let cols = bl / n1;
    let tau = &params.tau[0];
    let mut acc = 0.0;
    for r in 0..n {
        for rp in 0..n {
            let b = &w[(r * n + rp) * bl..(r * n + rp + 1) * bl];
            let mut s = 0.0;
            for a in 0..n1 {
                let ta = tau[r * n1 + a];
                s += ta * b[a * cols..(a + 1) * cols].iter().map(|v| v * v).sum::<f64>();
            }
            acc += g.weight(r) * g.weight(rp) * s;
        }
    }
    0.5 * acc
}

/// `int_{t - d}^t q(s) ds` for a piecewise-linear `q` sampled at `times`.
fn tail_integral(times: &[f64], q: &[f64], d: f64) -> Result<f64, DelayError> {
    let t = *times.last().unwrap_or(&0.0);
    let a = t - d;
    if d <= 0.0 || times.is_empty() {
        return Ok(0.0);
    }
    if times[0] > a + 1e-9 * (1.0 + t.abs()) {
        return Err(DelayError::HistoryUnderflow {
            t_query: a,
            earliest: times[0],
        });
    }
    let mut acc = 0.0;
    for k in (1..times.len()).rev() {
        let (t0, t1) = (times[k - 1], times[k]);
        if t1 <= a {
            break;
        }
        if t0 >= a {
            acc += 0.5 * (t1 - t0) * (q[k - 1] + q[k]);
        } else {
            let qa = q[k - 1] + (q[k] - q[k - 1]) * (a - t0) / (t1 - t0);
            acc += 0.5 * (t1 - a) * (qa + q[k]);
        }
    }
    Ok(acc)
}

/// Evaluates the functional. `history` holds `(s, ztilde2(s))` samples,
/// oldest first, ending at the current time.
pub fn lyapunov_eval(
    err: &ErrorState<'_>,
    history: &[(f64, Vec<f64>)],
    params: &ModelParams,
    consts: &LyapunovConstants,
) -> Result<LyapunovValue, DelayError> {
    let g = &params.grid;
    let n = g.len();
    let [n1, n2] = params.dims;
    let v1z = quad_tau(err.ztilde1, &params.tau[0], n1, params);
    let v2z = quad_tau(err.ztilde2, &params.tau[1], n2, params);
    let v1w = kernel_tau(err.wtilde11, params);
    let v2w = kernel_tau(err.wtilde12, params);

    let mut w = [0.0; 2];
    if n2 > 0 {
        let times: Vec<f64> = history.iter().map(|h| h.0).collect();
        // |ztilde2(s, r')|^2 per point
        let q: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                history
                    .iter()
                    .map(|h| h.1[p * n2..(p + 1) * n2].iter().map(|v| v * v).sum())
                    .collect()
            })
            .collect();
        for (i, gamma) in [&consts.gamma1, &consts.gamma2].into_iter().enumerate() {
            if !params.is_active(i, 1) {
                continue;
            }
            let delay = &params.coupling(i, 1).delay;
            let mut acc = 0.0;
            for r in 0..n {
                if gamma[r] == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for rp in 0..n {
                    inner += g.weight(rp) * tail_integral(&times, &q[rp], delay.between(g, r, rp))?;
                }
                acc += g.weight(r) * gamma[r] * inner;
            }
            w[i] = acc;
        }
    }
    Ok(LyapunovValue {
        total: v1z + v2z + v1w + v2w + w[0] + w[1],
        v1z,
        v2z,
        v1w,
        v2w,
        w1: w[0],
        w2: w[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub value: LyapunovValue,
    /// `-c1 ||ztilde1||^2 - c2 ||ztilde2||^2`.
    pub bound: f64,
}

/// Samples the functional after every integrator step.
pub struct LyapunovMonitor<'s> {
    system: &'s dyn ErrorCoordinates,
    pub consts: LyapunovConstants,
    pub samples: Vec<LyapunovSample>,
}

impl<'s> LyapunovMonitor<'s> {
    pub fn new(system: &'s dyn ErrorCoordinates) -> Result<Self> {
        Ok(Self {
            consts: LyapunovConstants::new(system.params())?,
            system,
            samples: Vec::new(),
        })
    }

    pub fn report(&self) -> LyapunovReport {
        check_decrease(&self.samples, self.consts.certified())
    }
}

impl StepObserver for LyapunovMonitor<'_> {
    fn observe(&mut self, t: f64, y: &[f64], history: &HistoryBuffer) -> Result<(), DelayError> {
        let p = self.system.params();
        let [n1, n2] = p.dims;
        let parts = self.system.error_parts(y);
        let hist: Vec<(f64, Vec<f64>)> = if n2 > 0 {
            history.iter().map(|(s, row)| (s, self.system.ztilde2_from_history(row))).collect()
        } else {
            Vec::new()
        };
        let value = lyapunov_eval(
            &ErrorState {
                ztilde1: &parts[0],
                ztilde2: &parts[1],
                wtilde11: &parts[2],
                wtilde12: &parts[3],
            },
            &hist,
            p,
            &self.consts,
        )?;
        let e1 = weighted_l2_norm(&parts[0], n1, &p.grid);
        let e2 = weighted_l2_norm(&parts[1], n2, &p.grid);
        self.samples.push(LyapunovSample {
            t,
            value,
            bound: -self.consts.c1 * e1 * e1 - self.consts.c2 * e2 * e2,
        });
        Ok(())
    }
}

/// Finite-difference check of `dV/dt <= bound` between consecutive samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub value: Vec<f64>,
    pub dvdt: Vec<f64>,
    pub bound: Vec<f64>,
    pub tolerance: Vec<f64>,
    /// Interval indices where the difference quotient exceeds the bound by
    /// more than the tolerance.
    pub violations: Vec<usize>,
    /// Largest `dV/dt - bound - tolerance` seen.
    pub worst_excess: f64,
    /// Whether the gain is above the threshold, so violations are errors.
    pub certified: bool,
}

impl LyapunovReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

/// Compares `(V_{k+1} - V_k) / dt` with the mean of the bound at both ends.
/// The tolerance is `1e-6 V(0) + 10 dt^2 scale`, where `scale` is the local
/// size of the third derivative of `V` from third differences.
pub fn check_decrease(samples: &[LyapunovSample], certified: bool) -> LyapunovReport {
    let m = samples.len();
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let value: Vec<f64> = samples.iter().map(|s| s.value.total).collect();
    let v0 = value.first().copied().unwrap_or(0.0).abs();
    let third: Vec<f64> = (0..m.saturating_sub(3))
        .map(|k| {
            let h = (times[k + 3] - times[k]) / 3.0;
            (value[k + 3] - 3.0 * value[k + 2] + 3.0 * value[k + 1] - value[k]).abs() / h.powi(3)
        })
        .collect();
    let mut dvdt = Vec::new();
    let mut bound = Vec::new();
    let mut tolerance = Vec::new();
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..m.saturating_sub(1) {
        let h = times[k + 1] - times[k];
        let d = (value[k + 1] - value[k]) / h;
        let b = 0.5 * (samples[k].bound + samples[k + 1].bound);
        let lo = k.saturating_sub(2);
        let hi = (k + 1).min(third.len());
        let scale = third[lo.min(hi)..hi].iter().copied().fold(0.0, f64::max);
        let tol = 1e-6 * v0 + 10.0 * h * h * scale;
        let excess = d - b - tol;
        worst = worst.max(excess);
        if excess > 0.0 {
            violations.push(k);
        }
        dvdt.push(d);
        bound.push(b);
        tolerance.push(tol);
    }
    LyapunovReport {
        times,
        value,
        dvdt,
        bound,
        tolerance,
        violations,
        worst_excess: if worst.is_finite() { worst } else { 0.0 },
        certified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{integrate, IntegrateOptions, Interp, SimState};
    use crate::field::{build_grid, MeasureKind};
    use crate::observer::{ErrorSystem, ObserverSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table1(n: usize) -> ModelParams {
        ModelParams::table1(build_grid(n, MeasureKind::Lebesgue).unwrap()).unwrap()
    }

    #[test]
    fn table1_constants() {
        let p = table1(20);
        let c = LyapunovConstants::new(&p).unwrap();
        let a = 0.01;
        assert!((c.eps1 - (1.0 - a) / 4.0).abs() < 1e-9);
        assert!((c.eps2 - (1.0 + a) / (2.0 * a)).abs() < 1e-6);
        assert!((c.c1 - (100.0 - 200.0 / 99.0)).abs() < 1e-9);
        assert!((c.c2 - 0.2475).abs() < 1e-9);
        // the weights integrate to eps_i l_i2^2 ||w_i2||^2 / 2
        let int1: f64 = c.gamma1.iter().zip(p.grid.weights()).map(|(g, w)| g * w).sum();
        assert!((int1 - c.eps1 * 4.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_error_is_zero() {
        let p = table1(6);
        let c = LyapunovConstants::new(&p).unwrap();
        let z = vec![0.0; 6];
        let w = vec![0.0; 36];
        let hist: Vec<(f64, Vec<f64>)> = (0..=100).map(|k| (-0.1 + k as f64 * 1e-3, z.clone())).collect();
        let v = lyapunov_eval(
            &ErrorState {
                ztilde1: &z,
                ztilde2: &z,
                wtilde11: &w,
                wtilde12: &w,
            },
            &hist,
            &p,
            &c,
        )
        .unwrap();
        assert_eq!(v, LyapunovValue::default());
    }

    #[test]
    fn unit_first_error_gives_one_half() {
        let p = table1(10);
        let c = LyapunovConstants::new(&p).unwrap();
        let one = vec![1.0; 10];
        let z = vec![0.0; 10];
        let w = vec![0.0; 100];
        let hist = vec![(-0.2, z.clone()), (0.0, z.clone())];
        let v = lyapunov_eval(
            &ErrorState {
                ztilde1: &one,
                ztilde2: &z,
                wtilde11: &w,
                wtilde12: &w,
            },
            &hist,
            &p,
            &c,
        )
        .unwrap();
        assert!((v.total - 0.5).abs() < 1e-14);
    }

    #[test]
    fn short_history_is_an_error() {
        let p = table1(4);
        let c = LyapunovConstants::new(&p).unwrap();
        let z = vec![0.0; 4];
        let w = vec![0.0; 16];
        let hist = vec![(-0.05, z.clone()), (0.0, z.clone())];
        let err = ErrorState {
            ztilde1: &z,
            ztilde2: &z,
            wtilde11: &w,
            wtilde12: &w,
        };
        assert!(lyapunov_eval(&err, &hist, &p, &c).is_err());
    }

    #[test]
    fn random_state_matches_brute_force_sums() {
        let mut p = table1(5);
        p.tau[0] = vec![1.0, 1.5, 0.7, 2.0, 1.2];
        p.tau[1] = vec![0.8, 1.1, 1.3, 0.9, 1.0];
        let c = LyapunovConstants::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rv = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (z1, z2, w11, w12) = (rv(5), rv(5), rv(25), rv(25));
        let dt = 1e-3;
        let hist: Vec<(f64, Vec<f64>)> = (0..=100).map(|k| (-0.1 + k as f64 * dt, rv(5))).collect();
        let v = lyapunov_eval(
            &ErrorState {
                ztilde1: &z1,
                ztilde2: &z2,
                wtilde11: &w11,
                wtilde12: &w12,
            },
            &hist,
            &p,
            &c,
        )
        .unwrap();

        let h = p.grid.weight(0);
        let mut oracle = 0.0;
        for r in 0..5 {
            oracle += 0.5 * h * p.tau[0][r] * z1[r] * z1[r];
            oracle += 0.5 * h * p.tau[1][r] * z2[r] * z2[r];
            for rp in 0..5 {
                let k = r * 5 + rp;
                oracle += 0.5 * h * h * p.tau[0][r] * (w11[k] * w11[k] + w12[k] * w12[k]);
            }
        }
        // delay 0.1 is the full stored window: plain trapezoid over samples
        for rp in 0..5 {
            let mut integral = 0.0;
            for k in 0..100 {
                integral += 0.5 * dt * (hist[k].1[rp].powi(2) + hist[k + 1].1[rp].powi(2));
            }
            for r in 0..5 {
                oracle += h * h * (c.gamma1[r] + c.gamma2[r]) * integral;
            }
        }
        assert!((v.total - oracle).abs() < 1e-12, "{} vs {oracle}", v.total);
        let parts = v.v1z + v.v2z + v.v1w + v.v2w + v.w1 + v.w2;
        assert_eq!(v.total, parts);
    }

    #[test]
    fn exact_estimates_stay_at_zero() {
        let mut p = table1(6);
        p.alpha = 10.0;
        let obs = ObserverSystem::unforced(p).unwrap();
        let y0 = obs.with_exact_kernels(obs.initial_state(0.5, 0.5, 0.5, 0.5));
        let mut st = SimState::with_constant_history(&obs, 0.0, y0, 1e-3, Interp::CubicHermite).unwrap();
        let mut mon = LyapunovMonitor::new(&obs).unwrap();
        integrate(
            &obs,
            &mut st,
            &IntegrateOptions {
                t_end: 0.3,
                stride: 100,
                ..Default::default()
            },
            &mut [&mut mon],
        )
        .unwrap();
        let r = mon.report();
        assert!(r.value.iter().all(|v| *v == 0.0));
        assert_eq!(r.violation_count(), 0);
    }

    #[test]
    fn decrease_holds_on_a_small_forced_run() {
        let mut p = table1(6);
        p.alpha = 20.0;
        let inputs: [crate::delay::SharedInput; 2] = [
            std::sync::Arc::new(|t: f64, o: &mut [f64]| o.iter_mut().enumerate().for_each(|(k, v)| *v = 5.0 * (3.0 * t + k as f64).sin())),
            std::sync::Arc::new(|t: f64, o: &mut [f64]| o.iter_mut().enumerate().for_each(|(k, v)| *v = 5.0 * (4.2 * t - k as f64).cos())),
        ];
        let obs = ObserverSystem::new(p.clone(), inputs.clone()).unwrap();
        let err = ErrorSystem::new(p, inputs).unwrap();
        let y0 = err.from_observer_state(&obs, &obs.initial_state(1.0, 1.0, 1.0, 0.0));
        let mut st = SimState::with_constant_history(&err, 0.0, y0, 1e-3, Interp::CubicHermite).unwrap();
        let mut mon = LyapunovMonitor::new(&err).unwrap();
        integrate(
            &err,
            &mut st,
            &IntegrateOptions {
                t_end: 1.0,
                stride: 1000,
                ..Default::default()
            },
            &mut [&mut mon],
        )
        .unwrap();
        let r = mon.report();
        assert!(r.certified);
        assert_eq!(r.violation_count(), 0, "worst excess {}", r.worst_excess);
        assert!(r.value.last().unwrap() < &r.value[0]);
    }

    #[test]
    fn below_threshold_is_not_certified() {
        let mut p = table1(4);
        p.alpha = 0.0;
        assert!(!LyapunovConstants::new(&p).unwrap().certified());
    }
}
