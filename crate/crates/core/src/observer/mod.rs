//! Adaptive observer of the unmeasured activity and the two measured-row
//! kernels, and its error dynamics.

mod replay;
mod rhs;
mod system;

pub use replay::{
    replay_observer, spawn_measurement_feed, Measurement, MeasurementLog, NoiseHook, ReplayObserver, ReplayOutput,
};
pub use rhs::{error_rhs, observer_rhs, ErrorInputs, ErrorRates, ErrorSlices, ObserverInputs, ObserverRates, ObserverSlices};
pub use system::{ErrorSystem, ObserverSystem, ERROR_METRICS};
pub(crate) use system::flat_hs;


use crate::delay::ModelParams;
use crate::field::{hs_norm, kernel_compose, weighted_l2_norm, KernelField, SpatialGrid, StateField};
use crate::{Error, Result};

/// Systems whose state determines `(ztilde1, ztilde2, wtilde11, wtilde12)`.
pub trait ErrorCoordinates {
    fn params(&self) -> &ModelParams;
    /// Flat `(ztilde1, ztilde2, wtilde11, wtilde12)` of a full state.
    fn error_parts(&self, y: &[f64]) -> [Vec<f64>; 4];
    /// `ztilde2` from a stored history row (the delayed prefix of the state).
    fn ztilde2_from_history(&self, row: &[f64]) -> Vec<f64>;
}

/// Estimates `(zhat1, zhat2, what11, what12)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub zhat1: StateField,
    pub zhat2: StateField,
    pub what11: KernelField,
    pub what12: KernelField,
}

impl ObserverState {
    /// `zhat1 = zhat1_0`, `zhat2 = 0`, `what = 0`.
    pub fn initial(params: &ModelParams, zhat1_0: f64) -> Self {
        let n = params.n_points();
        let [n1, n2] = params.dims;
        Self {
            zhat1: StateField::constant(n, n1, zhat1_0),
            zhat2: StateField::zeros(n, n2),
            what11: KernelField::zeros(n, n1, params.coupling(0, 0).kernel.col_dim()),
            what12: KernelField::zeros(n, n1, params.coupling(0, 1).kernel.col_dim()),
        }
    }

    /// Exact estimates of a given plant state.
    pub fn exact(params: &ModelParams, z1: &StateField, z2: &StateField) -> Self {
        Self {
            zhat1: z1.clone(),
            zhat2: z2.clone(),
            what11: params.coupling(0, 0).kernel.clone(),
            what12: params.coupling(0, 1).kernel.clone(),
        }
    }
}

/// `(zhat1 - z1, zhat2 - z2, what11 - w11, what12 - w12)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationError {
    pub ztilde1: StateField,
    pub ztilde2: StateField,
    pub wtilde11: KernelField,
    pub wtilde12: KernelField,
}

impl EstimationError {
    pub fn between(params: &ModelParams, z1: &StateField, z2: &StateField, est: &ObserverState) -> Result<Self> {
        Ok(Self {
            ztilde1: est.zhat1.sub(z1)?,
            ztilde2: est.zhat2.sub(z2)?,
            wtilde11: est.what11.sub(&params.coupling(0, 0).kernel)?,
            wtilde12: est.what12.sub(&params.coupling(0, 1).kernel)?,
        })
    }
}

/// Outcome of the strong dissipativity test on the unmeasured subsystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissipativity {
    pub holds: bool,
    /// `1 - l22 ||w22||`.
    pub margin: f64,
}

pub fn check_dissipativity(params: &ModelParams) -> Dissipativity {
    let margin = 1.0 - params.gain_product(1, 1);
    Dissipativity {
        holds: margin > 0.0,
        margin,
    }
}

/// `l12^2 ||w12||^2 / (2 (1 - l22^2 ||w22||^2))`, zero without unmeasured
/// population.
pub fn alpha_star(params: &ModelParams) -> Result<f64> {
    if params.dims[1] == 0 {
        return Ok(0.0);
    }
    let p22 = params.gain_product(1, 1);
    if p22 >= 1.0 {
        return Err(Error::Dissipativity { product: p22 });
    }
    let p12 = params.gain_product(0, 1);
    Ok(p12 * p12 / (2.0 * (1.0 - p22 * p22)))
}

/// Norms recorded along observer runs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorMetrics {
    pub ztilde1: f64,
    pub ztilde2: f64,
    pub wtilde11: f64,
    pub wtilde12: f64,
    /// `||wtilde11 o rho1||_F`.
    pub wtilde11_rho: f64,
    /// `||wtilde12 o rho2||_F`.
    pub wtilde12_rho: f64,
}

/// Weighting kernels `rho_j`; `None` stands for the Dirac mass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weighting {
    pub rho1: Option<KernelField>,
    pub rho2: Option<KernelField>,
}

fn rho_norm(w: &KernelField, rho: Option<&KernelField>, grid: &SpatialGrid) -> Result<f64> {
    match rho {
        // composing with the Dirac mass is the identity
        None => Ok(hs_norm(w, grid)),
        Some(r) => Ok(hs_norm(&kernel_compose(w, r, grid)?, grid)),
    }
}

pub fn error_metrics(err: &EstimationError, rho: &Weighting, grid: &SpatialGrid) -> Result<ErrorMetrics> {
    Ok(ErrorMetrics {
        ztilde1: weighted_l2_norm(err.ztilde1.values(), err.ztilde1.population_dim(), grid),
        ztilde2: weighted_l2_norm(err.ztilde2.values(), err.ztilde2.population_dim(), grid),
        wtilde11: hs_norm(&err.wtilde11, grid),
        wtilde12: hs_norm(&err.wtilde12, grid),
        wtilde11_rho: rho_norm(&err.wtilde11, rho.rho1.as_ref(), grid)?,
        wtilde12_rho: rho_norm(&err.wtilde12, rho.rho2.as_ref(), grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_grid, gaussian_kernel, MeasureKind};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table1() -> ModelParams {
        ModelParams::table1(build_grid(20, MeasureKind::Lebesgue).unwrap()).unwrap()
    }

    #[test]
    fn table1_gate() {
        let p = table1();
        let d = check_dissipativity(&p);
        assert!(d.holds);
        assert!((d.margin - 0.9).abs() < 1e-9);
        assert!((alpha_star(&p).unwrap() - 200.0 / 99.0).abs() < 1e-9);
    }

    #[test]
    fn full_measurement_needs_no_gain() {
        assert_eq!(alpha_star(&table1().without_population2()).unwrap(), 0.0);
    }

    #[test]
    fn dissipativity_boundary() {
        let mut p = table1();
        p.couplings[1][1].kernel = gaussian_kernel(&p.grid, 60.0, 1.0).unwrap();
        assert!(matches!(alpha_star(&p), Err(Error::Dissipativity { product }) if (product - 1.0).abs() < 1e-12));
        p.couplings[1][1].kernel = gaussian_kernel(&p.grid, 60.0, 1.5).unwrap();
        assert!(!check_dissipativity(&p).holds);
        p.couplings[1][1].kernel = KernelField::zeros(20, 1, 1);
        let d = check_dissipativity(&p);
        assert!(d.holds && d.margin == 1.0);
    }

    #[test]
    fn exact_estimates_have_zero_error() {
        let p = table1();
        let z1 = StateField::constant(20, 1, 0.4);
        let z2 = StateField::constant(20, 1, -0.2);
        let est = ObserverState::exact(&p, &z1, &z2);
        let e = EstimationError::between(&p, &z1, &z2, &est).unwrap();
        let m = error_metrics(&e, &Weighting::default(), &p.grid).unwrap();
        assert_eq!(m, ErrorMetrics::default());
    }

    #[test]
    fn dirac_weighting_keeps_the_norm() {
        let grid = build_grid(7, MeasureKind::Counting).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = KernelField::scalar_from_fn(&grid, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let e = EstimationError {
            ztilde1: StateField::zeros(7, 1),
            ztilde2: StateField::zeros(7, 1),
            wtilde11: w.clone(),
            wtilde12: w.clone(),
        };
        let rho = Weighting {
            rho1: Some(KernelField::dirac(&grid, 1)),
            rho2: None,
        };
        let m = error_metrics(&e, &rho, &grid).unwrap();
        assert!((m.wtilde11_rho - m.wtilde11).abs() < 1e-14);
        assert_eq!(m.wtilde12_rho, m.wtilde12);
    }

    #[test]
    fn weighted_norm_matches_dense_product() {
        let grid = build_grid(6, MeasureKind::Counting).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = KernelField::scalar_from_fn(&grid, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(6, 6);
        let rho = KernelField::scalar_from_fn(&grid, |i, j| spd[(i, j)]).unwrap();
        let e = EstimationError {
            ztilde1: StateField::zeros(6, 1),
            ztilde2: StateField::zeros(6, 1),
            wtilde11: w.clone(),
            wtilde12: w.clone(),
        };
        let m = error_metrics(
            &e,
            &Weighting {
                rho1: Some(rho),
                rho2: None,
            },
            &grid,
        )
        .unwrap();
        let wm = DMatrix::from_fn(6, 6, |i, j| w.block(i, j)[0]);
        assert!((m.wtilde11_rho - (wm * spd).norm()).abs() < 1e-12);
    }
}
