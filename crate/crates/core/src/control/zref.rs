use crate::delay::{Coupling, ModelParams};
use crate::field::{weighted_l2_norm, SpatialGrid};
use crate::{Error, Result};

const TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 10_000;

/// Stationary reference of the unmeasured population.
#[derive(Debug, Clone, PartialEq)]
pub struct ZrefSolution {
    pub zref2: Vec<f64>,
    pub iterations: usize,
    /// `||F(x) - x||` at the returned point.
    pub residual: f64,
    /// Successive residuals, starting from `x = 0`.
    pub residuals: Vec<f64>,
}

impl ZrefSolution {
    /// Largest ratio of successive residuals.
    pub fn worst_contraction(&self) -> f64 {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// `out += int w(r, r') S(src(r')) dr'` for a field that is constant in time.
fn stationary_drive(c: &Coupling, grid: &SpatialGrid, src: &[f64], rows: usize, out: &mut [f64]) {
    let n = grid.len();
    let cols = c.kernel.col_dim();
    let in_dim = if n == 0 { 0 } else { src.len() / n };
    let acts: Vec<Vec<f64>> = (0..n)
        .map(|p| c.activation.eval(&src[p * in_dim..(p + 1) * in_dim], cols))
        .collect();
    for r in 0..n {
        for (rp, s) in acts.iter().enumerate() {
            let b = c.kernel.block(r, rp);
            let w = grid.weight(rp);
            for a in 0..rows {
                out[r * rows + a] += w * (0..cols).map(|k| b[a * cols + k] * s[k]).sum::<f64>();
            }
        }
    }
}

/// Solves `z2 = int w22 S22(z2) + int w21 S21(zref1)` by Picard iteration
/// from zero. The map contracts at rate `l22 ||w22||`.
pub fn solve_zref2(params: &ModelParams) -> Result<ZrefSolution> {
    params.validate()?;
    let [n1, n2] = params.dims;
    let g = &params.grid;
    let n = g.len();
    if n2 == 0 {
        return Ok(ZrefSolution {
            zref2: Vec::new(),
            iterations: 0,
            residual: 0.0,
            residuals: Vec::new(),
        });
    }
    let rate = params.gain_product(1, 1);
    if rate >= 1.0 {
        return Err(Error::Dissipativity { product: rate });
    }
    let mut v2 = vec![0.0; n * n2];
    if n1 > 0 {
        stationary_drive(params.coupling(1, 0), g, &params.zref1, n2, &mut v2);
    }
    let map = |x: &[f64]| -> Vec<f64> {
        let mut y = v2.clone();
        stationary_drive(params.coupling(1, 1), g, x, n2, &mut y);
        y
    };

    let mut x = vec![0.0; n * n2];
    let mut residuals = Vec::new();
    for it in 0..=MAX_ITERATIONS {
        let fx = map(&x);
        let diff: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = weighted_l2_norm(&diff, n2, g);
        residuals.push(res);
        if res < TOLERANCE {
            return Ok(ZrefSolution {
                zref2: x,
                iterations: it,
                residual: res,
                residuals,
            });
        }
        x = fx;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: *residuals.last().unwrap_or(&f64::NAN),
    })
}
