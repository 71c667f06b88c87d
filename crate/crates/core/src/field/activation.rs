use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::kernel::spectral_norm;
use super::FieldError;

/// Activation nonlinearity `S_ij : R^{n_j} -> R^{n_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationSpec {
    /// Componentwise `tanh`.
    Tanh,
    /// Componentwise `amplitude / (1 + exp(-gain (x - shift))) - offset`.
    ScaledShiftedSigmoid {
        amplitude: f64,
        gain: f64,
        shift: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `slope (x - center)` inside the ball of radius `radius` around `center`,
    /// radially saturated outside of it.
    LocallyLinear {
        /// Row-major `out x in` matrix.
        slope: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
    },
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self::Tanh
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationSpec {
    /// Scalar locally linear map `slope * (x - center)` saturated at `radius`.
    pub fn locally_linear_scalar(slope: f64, center: f64, radius: f64) -> Self {
        Self::LocallyLinear {
            slope: vec![slope],
            center: vec![center],
            radius,
        }
    }

    /// Checks the spec against the block shape it is used with.
    pub fn validate(&self, in_dim: usize, out_dim: usize) -> Result<(), FieldError> {
        match self {
            Self::Tanh => {
                if in_dim != out_dim {
                    return Err(FieldError::Parameter(format!(
                        "componentwise activation cannot map dimension {in_dim} to {out_dim}"
                    )));
                }
            }
            Self::ScaledShiftedSigmoid {
                amplitude,
                gain,
                shift,
                offset,
            } => {
                if in_dim != out_dim {
                    return Err(FieldError::Parameter(format!(
                        "componentwise activation cannot map dimension {in_dim} to {out_dim}"
                    )));
                }
                if ![amplitude, gain, shift, offset].iter().all(|v| v.is_finite()) {
                    return Err(FieldError::Parameter("sigmoid parameters must be finite".into()));
                }
            }
            Self::LocallyLinear { slope, center, radius } => {
                if slope.len() != in_dim * out_dim {
                    return Err(FieldError::Shape {
                        expected: in_dim * out_dim,
                        found: slope.len(),
                    });
                }
                if center.len() != in_dim {
                    return Err(FieldError::Shape {
                        expected: in_dim,
                        found: center.len(),
                    });
                }
                if !(*radius > 0.0) || radius.is_nan() {
                    return Err(FieldError::Parameter(format!(
                        "saturation radius must be positive, got {radius}"
                    )));
                }
                if slope.iter().chain(center).any(|v| !v.is_finite()) {
                    return Err(FieldError::Parameter("locally linear parameters must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Writes `S(x)` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Tanh => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.tanh();
                }
            }
            Self::ScaledShiftedSigmoid {
                amplitude,
                gain,
                shift,
                offset,
            } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = amplitude * logistic(gain * (v - shift)) - offset;
                }
            }
            Self::LocallyLinear { slope, center, radius } => {
                let n_in = center.len();
                let dist = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                let factor = if dist <= *radius { 1.0 } else { radius / dist };
                for (row, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for c in 0..n_in {
                        s += slope[row * n_in + c] * (x[c] - center[c]);
                    }
                    *o = factor * s;
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64], out_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Scalar evaluation, for 1-dimensional populations.
    pub fn eval_scalar(&self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            _ => {
                let mut out = [0.0];
                self.eval_into(&[x], &mut out);
                out[0]
            }
        }
    }

    /// Global Lipschitz constant `l_ij` with respect to the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Tanh => 1.0,
            Self::ScaledShiftedSigmoid { amplitude, gain, .. } => amplitude.abs() * gain.abs() / 4.0,
            // radial projection onto the ball is 1-Lipschitz
            Self::LocallyLinear { slope, center, .. } => {
                let n_in = center.len();
                let n_out = if n_in == 0 { 0 } else { slope.len() / n_in };
                spectral_norm(slope, n_out, n_in)
            }
        }
    }

    /// Bound `S_bar` of `|S(x)|` (Euclidean) for inputs of dimension `in_dim`.
    pub fn bound(&self, in_dim: usize) -> f64 {
        match self {
            Self::Tanh => (in_dim as f64).sqrt(),
            Self::ScaledShiftedSigmoid { amplitude, offset, .. } => {
                let per = (amplitude - offset).abs().max(offset.abs());
                per * (in_dim as f64).sqrt()
            }
            Self::LocallyLinear { radius, .. } => self.lipschitz() * radius,
        }
    }

    /// Jacobian `dS/dx` at `x`, `out_dim x in_dim`.
    pub fn derivative(&self, x: &[f64], out_dim: usize) -> DMatrix<f64> {
        let n_in = x.len();
        match self {
            Self::Tanh => {
                let mut d = DMatrix::zeros(out_dim, n_in);
                for i in 0..n_in.min(out_dim) {
                    let t = x[i].tanh();
                    d[(i, i)] = 1.0 - t * t;
                }
                d
            }
            Self::ScaledShiftedSigmoid {
                amplitude, gain, shift, ..
            } => {
                let mut d = DMatrix::zeros(out_dim, n_in);
                for i in 0..n_in.min(out_dim) {
                    let s = logistic(gain * (x[i] - shift));
                    d[(i, i)] = amplitude * gain * s * (1.0 - s);
                }
                d
            }
            Self::LocallyLinear { slope, center, radius } => {
                let l = DMatrix::from_row_slice(out_dim, n_in, slope);
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                if dist <= *radius {
                    return l;
                }
                let u = nalgebra::DVector::from_vec(diff) / dist;
                let proj = DMatrix::identity(n_in, n_in) - &u * u.transpose();
                l * proj * (radius / dist)
            }
        }
    }

    /// Whether `S(x) = S'(center) (x - center)` holds on a ball around the
    /// reference with an invertible slope.
    pub fn is_locally_linear(&self) -> bool {
        match self {
            Self::LocallyLinear { slope, center, .. } => {
                let n = center.len();
                if slope.len() != n * n || n == 0 {
                    return false;
                }
                DMatrix::from_row_slice(n, n, slope).determinant().abs() > 1e-12
            }
            _ => false,
        }
    }

    /// Radius of the linear region, `0` for activations that have none.
    pub fn linear_radius(&self) -> f64 {
        match self {
            Self::LocallyLinear { radius, .. } => *radius,
            _ => 0.0,
        }
    }

    pub fn center(&self) -> Option<&[f64]> {
        match self {
            Self::LocallyLinear { center, .. } => Some(center),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn specs() -> Vec<ActivationSpec> {
        vec![
            ActivationSpec::Tanh,
            ActivationSpec::ScaledShiftedSigmoid {
                amplitude: 2.0,
                gain: 3.0,
                shift: 0.5,
                offset: 0.0,
            },
            ActivationSpec::ScaledShiftedSigmoid {
                amplitude: 1.0,
                gain: 4.0,
                shift: 0.0,
                offset: 0.5,
            },
            ActivationSpec::locally_linear_scalar(1.5, 0.2, 0.3),
        ]
    }

    #[test]
    fn tanh_constants() {
        let s = ActivationSpec::Tanh;
        assert_eq!(s.lipschitz(), 1.0);
        assert_eq!(s.bound(1), 1.0);
        assert_eq!(s.eval_scalar(0.0), 0.0);
        assert!((s.eval_scalar(1.0) - 1.0_f64.tanh()).abs() < 1e-16);
    }

    #[test]
    fn locally_linear_is_linear_in_ball() {
        let s = ActivationSpec::locally_linear_scalar(2.0, 0.5, 0.25);
        assert_eq!(s.eval_scalar(0.5), 0.0);
        assert!((s.eval_scalar(0.6) - 0.2).abs() < 1e-15);
        // saturates at slope * radius
        assert!((s.eval_scalar(10.0) - 0.5).abs() < 1e-15);
        assert!((s.eval_scalar(-10.0) + 0.5).abs() < 1e-15);
        assert!(s.is_locally_linear());
        assert!(!ActivationSpec::Tanh.is_locally_linear());
        assert_eq!(s.derivative(&[0.55], 1)[(0, 0)], 2.0);
    }

    #[test]
    fn locally_linear_rejects_bad_shapes() {
        let s = ActivationSpec::LocallyLinear {
            slope: vec![1.0, 0.0, 0.0],
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert!(s.validate(2, 2).is_err());
        assert!(ActivationSpec::locally_linear_scalar(1.0, 0.0, 0.0).validate(1, 1).is_err());
        assert!(ActivationSpec::Tanh.validate(1, 2).is_err());
    }

    #[test]
    fn singular_slope_is_not_certifiable() {
        let s = ActivationSpec::LocallyLinear {
            slope: vec![1.0, 1.0, 1.0, 1.0],
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert!(!s.is_locally_linear());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for s in specs() {
            for &x in &[-1.3, -0.05, 0.0, 0.35, 2.0] {
                let h = 1e-6;
                let fd = (s.eval_scalar(x + h) - s.eval_scalar(x - h)) / (2.0 * h);
                assert!((s.derivative(&[x], 1)[(0, 0)] - fd).abs() < 1e-6, "{s:?} at {x}");
            }
        }
    }

    #[test]
    fn vector_locally_linear_saturates_radially() {
        let s = ActivationSpec::LocallyLinear {
            slope: vec![1.0, 0.0, 0.0, 2.0],
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let out = s.eval(&[3.0, 4.0], 2);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 1.6).abs() < 1e-15);
        assert_eq!(s.lipschitz(), 2.0);
        assert_eq!(s.bound(2), 2.0);
    }

    proptest! {
        #[test]
        fn lipschitz_and_bound_hold(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            for s in specs() {
                let (sa, sb) = (s.eval_scalar(a), s.eval_scalar(b));
                prop_assert!((sa - sb).abs() <= s.lipschitz() * (a - b).abs() * (1.0 + 1e-12) + 1e-15);
                prop_assert!(sa.abs() <= s.bound(1) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn vector_lipschitz_holds(x in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let s = ActivationSpec::LocallyLinear {
                slope: vec![1.0, -0.5, 0.3, 2.0],
                center: vec![0.1, -0.2],
                radius: 0.7,
            };
            let (a, b) = (&x[..2], &x[2..]);
            let (sa, sb) = (s.eval(a, 2), s.eval(b, 2));
            let d_out = ((sa[0] - sb[0]).powi(2) + (sa[1] - sb[1]).powi(2)).sqrt();
            let d_in = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            prop_assert!(d_out <= s.lipschitz() * d_in * (1.0 + 1e-12) + 1e-15);
            prop_assert!((sa[0].powi(2) + sa[1].powi(2)).sqrt() <= s.bound(2) * (1.0 + 1e-12));
        }

        #[test]
        fn locally_linear_identity_inside_ball(dz in -0.3f64..0.3) {
            let s = ActivationSpec::locally_linear_scalar(1.5, 0.2, 0.3);
            prop_assert!((s.eval_scalar(0.2 + dz) - 1.5 * dz).abs() < 1e-14);
        }
    }
}
