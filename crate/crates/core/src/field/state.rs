use super::{FieldError, SpatialGrid};

/// Activity of one population (`dim` components) at every grid point.
///
/// Values are stored point-major: entry `(k, c)` lives at `k * dim + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    values: Vec<f64>,
    n_points: usize,
    dim: usize,
}

impl StateField {
    pub fn new(n_points: usize, dim: usize, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != n_points * dim {
            return Err(FieldError::Shape {
                expected: n_points * dim,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(Self { values, n_points, dim })
    }

    pub fn zeros(n_points: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; n_points * dim],
            n_points,
            dim,
        }
    }

    pub fn constant(n_points: usize, dim: usize, value: f64) -> Self {
        Self {
            values: vec![value; n_points * dim],
            n_points,
            dim,
        }
    }

    pub fn from_fn(
        grid: &SpatialGrid,
        dim: usize,
        mut f: impl FnMut(f64, usize) -> f64,
    ) -> Result<Self, FieldError> {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &r in grid.points() {
            for c in 0..dim {
                values.push(f(r, c));
            }
        }
        Self::new(grid.len(), dim, values)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn population_dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, point: usize) -> &[f64] {
        &self.values[point * self.dim..(point + 1) * self.dim]
    }

    pub fn sub(&self, other: &StateField) -> Result<StateField, FieldError> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            n_points: self.n_points,
            dim: self.dim,
        })
    }

    pub fn add(&self, other: &StateField) -> Result<StateField, FieldError> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            values,
            n_points: self.n_points,
            dim: self.dim,
        })
    }

    pub fn scaled(&self, factor: f64) -> StateField {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            n_points: self.n_points,
            dim: self.dim,
        }
    }

    fn check_same_shape(&self, other: &StateField) -> Result<(), FieldError> {
        if self.n_points != other.n_points || self.dim != other.dim {
            return Err(FieldError::DimensionMismatch {
                left: (self.n_points, self.dim),
                right: (other.n_points, other.dim),
            });
        }
        Ok(())
    }
}

/// `sqrt(sum_r weight(r) |f(r)|^2)`.
pub fn field_l2_norm(field: &StateField, grid: &SpatialGrid) -> f64 {
    weighted_l2_norm(field.values(), field.population_dim(), grid)
}

/// L2 norm of a raw point-major slice; shared by the integrator hot paths.
pub fn weighted_l2_norm(values: &[f64], dim: usize, grid: &SpatialGrid) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    values
        .chunks_exact(dim)
        .zip(grid.weights())
        .map(|(x, w)| w * x.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_grid, MeasureKind};

    #[test]
    fn rejects_non_finite_entries() {
        assert_eq!(
            StateField::new(2, 1, vec![1.0, f64::NAN]),
            Err(FieldError::NonFinite { index: 1 })
        );
        assert!(StateField::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            StateField::new(3, 2, vec![0.0; 5]),
            Err(FieldError::Shape { expected: 6, found: 5 })
        ));
    }

    #[test]
    fn norms_of_simple_fields() {
        let leb = build_grid(20, MeasureKind::Lebesgue).unwrap();
        assert_eq!(field_l2_norm(&StateField::zeros(20, 1), &leb), 0.0);
        let one = StateField::constant(20, 1, 1.0);
        assert!((field_l2_norm(&one, &leb) - 1.0).abs() < 1e-12);

        let single = build_grid(1, MeasureKind::Counting).unwrap();
        let f = StateField::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(field_l2_norm(&f, &single), 5.0);
    }

    #[test]
    fn empty_population_has_zero_norm() {
        let g = build_grid(5, MeasureKind::Lebesgue).unwrap();
        assert_eq!(field_l2_norm(&StateField::zeros(5, 0), &g), 0.0);
    }
}
