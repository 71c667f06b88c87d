use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::delay::{InputField, SharedInput, ZeroInput};
use crate::field::SpatialGrid;
use crate::{Error, Result};

/// Input or excitation signal over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// `mu sin(lambda t r)` in every component.
    SpaceTimeSine { mu: f64, lambda: f64 },
    /// `sqrt(2 kappa / T) sum_l sin(2 l pi t / T) e_l` over the first `dim`
    /// vectors of an orthonormal basis of the discrete state space.
    SineBasis { period: f64, kappa: f64, dim: usize },
    Zero,
    /// Same value in every component.
    Constant { value: f64 },
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self::Zero
    }
}

impl SignalSpec {
    pub fn validate(&self, grid: &SpatialGrid, pop_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            Self::SpaceTimeSine { mu, lambda } if !(mu.is_finite() && lambda.is_finite()) => {
                bad("sine amplitude and frequency must be finite".into())
            }
            Self::SineBasis { period, kappa, dim } => {
                if !(period > 0.0 && period.is_finite()) {
                    return bad(format!("period must be positive, got {period}"));
                }
                if !(kappa >= 0.0 && kappa.is_finite()) {
                    return bad(format!("kappa must be nonnegative, got {kappa}"));
                }
                if dim > grid.len() * pop_dim {
                    return bad(format!(
                        "basis dimension {dim} exceeds the state dimension {}",
                        grid.len() * pop_dim
                    ));
                }
                Ok(())
            }
            Self::Constant { value } if !value.is_finite() => bad("constant signal must be finite".into()),
            _ => Ok(()),
        }
    }

    /// Bound `M` of `sup_t ||g(t)||` in the weighted norm of the grid.
    pub fn bound(&self, grid: &SpatialGrid, pop_dim: usize) -> f64 {
        let mass = (grid.domain_measure() * pop_dim as f64).sqrt();
        match *self {
            Self::SpaceTimeSine { mu, .. } => mu.abs() * mass,
            Self::SineBasis { period, kappa, dim } => (2.0 * kappa * dim as f64 / period).sqrt(),
            Self::Zero => 0.0,
            Self::Constant { value } => value.abs() * mass,
        }
    }
}

struct SpaceTimeSine {
    mu: f64,
    lambda: f64,
    points: Vec<f64>,
    dim: usize,
}

impl InputField for SpaceTimeSine {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (p, r) in self.points.iter().enumerate() {
            let v = self.mu * (self.lambda * t * r).sin();
            out[p * self.dim..(p + 1) * self.dim].fill(v);
        }
    }
}

struct SineBasis {
    scale: f64,
    period: f64,
    /// `(flat index, 1 / sqrt(weight))` of each basis vector.
    basis: Vec<(usize, f64)>,
}

impl InputField for SineBasis {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (l, (k, c)) in self.basis.iter().enumerate() {
            let freq = 2.0 * PI * (l + 1) as f64 / self.period;
            out[*k] += self.scale * c * (freq * t).sin();
        }
    }
}

/// Evaluable signal for a population of dimension `pop_dim`.
pub fn make_signal(spec: &SignalSpec, grid: &SpatialGrid, pop_dim: usize) -> Result<SharedInput> {
    spec.validate(grid, pop_dim)?;
    Ok(match *spec {
        SignalSpec::SpaceTimeSine { mu, lambda } => Arc::new(SpaceTimeSine {
            mu,
            lambda,
            points: grid.points().to_vec(),
            dim: pop_dim,
        }),
        SignalSpec::SineBasis { period, kappa, dim } => Arc::new(SineBasis {
            scale: (2.0 * kappa / period).sqrt(),
            period,
            basis: (0..dim).map(|k| (k, 1.0 / grid.weight(k / pop_dim.max(1)).sqrt())).collect(),
        }),
        SignalSpec::Zero => Arc::new(ZeroInput),
        SignalSpec::Constant { value } => Arc::new(move |_t: f64, out: &mut [f64]| out.fill(value)),
    })
}
