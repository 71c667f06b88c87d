use nalgebra::DMatrix;

use super::{FieldError, SpatialGrid, StateField};

/// Matrix-valued kernel `k(r, r')` sampled on a grid.
///
/// Blocks are `rows x cols`, stored row-major, and the block for `(r, r')`
/// starts at `(r * N + r') * rows * cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    data: Vec<f64>,
    n_points: usize,
    rows: usize,
    cols: usize,
}

impl KernelField {
    pub fn new(n_points: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        let expected = n_points * n_points * rows * cols;
        if data.len() != expected {
            return Err(FieldError::Shape {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(Self {
            data,
            n_points,
            rows,
            cols,
        })
    }

    pub fn zeros(n_points: usize, rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; n_points * n_points * rows * cols],
            n_points,
            rows,
            cols,
        }
    }

    /// Scalar kernel built from `f(r, r')` evaluated on grid coordinates.
    pub fn scalar_from_fn(grid: &SpatialGrid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, FieldError> {
        let n = grid.len();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, 1, 1, data)
    }

    /// Kernel of the identity operator: `dim x dim` identity blocks on the
    /// diagonal divided by the point weight, zero elsewhere. On a counting
    /// grid this is the plain Dirac mass.
    pub fn dirac(grid: &SpatialGrid, dim: usize) -> Self {
        let n = grid.len();
        let mut k = Self::zeros(n, dim, dim);
        for p in 0..n {
            let w = grid.weight(p);
            let block = k.block_mut(p, p);
            for a in 0..dim {
                block[a * dim + a] = 1.0 / w;
            }
        }
        k
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn row_dim(&self) -> usize {
        self.rows
    }

    pub fn col_dim(&self) -> usize {
        self.cols
    }

    pub fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, r: usize, rp: usize) -> &[f64] {
        let len = self.block_len();
        let start = (r * self.n_points + rp) * len;
        &self.data[start..start + len]
    }

    pub fn block_mut(&mut self, r: usize, rp: usize) -> &mut [f64] {
        let len = self.block_len();
        let start = (r * self.n_points + rp) * len;
        &mut self.data[start..start + len]
    }

    pub fn sub(&self, other: &KernelField) -> Result<KernelField, FieldError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &KernelField) -> Result<KernelField, FieldError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scaled(&self, factor: f64) -> KernelField {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    fn zip_with(&self, other: &KernelField, f: impl Fn(f64, f64) -> f64) -> Result<KernelField, FieldError> {
        if (self.n_points, self.rows, self.cols) != (other.n_points, other.rows, other.cols) {
            return Err(FieldError::DimensionMismatch {
                left: (self.n_points, self.block_len()),
                right: (other.n_points, other.block_len()),
            });
        }
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
            ..*self
        })
    }

    /// Dense `(N rows) x (N cols)` matrix with quadrature weights folded in on
    /// the integration side, i.e. the matrix of `x -> k x` in raw coordinates.
    pub fn to_operator_matrix(&self, grid: &SpatialGrid) -> DMatrix<f64> {
        let n = self.n_points;
        let (rows, cols) = (self.rows, self.cols);
        let mut m = DMatrix::zeros(n * rows, n * cols);
        for r in 0..n {
            for rp in 0..n {
                let b = self.block(r, rp);
                let w = grid.weight(rp);
                for a in 0..rows {
                    for c in 0..cols {
                        m[(r * rows + a, rp * cols + c)] = w * b[a * cols + c];
                    }
                }
            }
        }
        m
    }
}

/// Normalized Gaussian `omega * g / ||g||` with `g(r, r') = exp(-sigma |r - r'|^2)`.
pub fn gaussian_kernel(grid: &SpatialGrid, sigma: f64, omega: f64) -> Result<KernelField, FieldError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(FieldError::Parameter(format!("gaussian width must be positive, got {sigma}")));
    }
    let raw = raw_gaussian(grid, sigma)?;
    let norm = hs_norm(&raw, grid);
    Ok(raw.scaled(omega / norm))
}

/// Unnormalized `exp(-sigma |r - r'|^2)` on grid points.
pub fn raw_gaussian(grid: &SpatialGrid, sigma: f64) -> Result<KernelField, FieldError> {
    KernelField::scalar_from_fn(grid, |i, j| {
        let d = grid.dist(i, j);
        (-sigma * d * d).exp()
    })
}

/// Frobenius-based Hilbert-Schmidt norm.
pub fn hs_norm(k: &KernelField, grid: &SpatialGrid) -> f64 {
    let n = k.n_points();
    let mut acc = 0.0;
    for r in 0..n {
        for rp in 0..n {
            let f2: f64 = k.block(r, rp).iter().map(|v| v * v).sum();
            acc += grid.weight(r) * grid.weight(rp) * f2;
        }
    }
    acc.sqrt()
}

/// L2 norm of the pointwise spectral norm.
pub fn l2_opnorm(k: &KernelField, grid: &SpatialGrid) -> f64 {
    let n = k.n_points();
    let mut acc = 0.0;
    for r in 0..n {
        for rp in 0..n {
            let s2 = spectral_norm_sq(k.block(r, rp), k.row_dim(), k.col_dim());
            acc += grid.weight(r) * grid.weight(rp) * s2;
        }
    }
    acc.sqrt()
}

/// Largest singular value of a row-major `rows x cols` block, from the
/// eigenvalues of `b^T b`.
pub fn spectral_norm(block: &[f64], rows: usize, cols: usize) -> f64 {
    spectral_norm_sq(block, rows, cols).sqrt()
}

fn spectral_norm_sq(block: &[f64], rows: usize, cols: usize) -> f64 {
    match (rows, cols) {
        (0, _) | (_, 0) => 0.0,
        // rank one: spectral and Frobenius norms coincide
        (1, _) | (_, 1) => block.iter().map(|v| v * v).sum::<f64>(),
        _ => {
            let b = DMatrix::from_row_slice(rows, cols, block);
            let gram = b.transpose() * &b;
            let eig = gram.symmetric_eigenvalues();
            eig.iter().cloned().fold(0.0_f64, f64::max)
        }
    }
}

/// Kernel of the composed operator, `(w o rho)(r, r') = sum_r'' weight(r'') w(r, r'') rho(r'', r')`.
pub fn kernel_compose(w: &KernelField, rho: &KernelField, grid: &SpatialGrid) -> Result<KernelField, FieldError> {
    if w.col_dim() != rho.row_dim() || w.n_points() != rho.n_points() || w.n_points() != grid.len() {
        return Err(FieldError::DimensionMismatch {
            left: (w.n_points(), w.col_dim()),
            right: (rho.n_points(), rho.row_dim()),
        });
    }
    let n = grid.len();
    let (p, m, q) = (w.row_dim(), w.col_dim(), rho.col_dim());
    let mut out = KernelField::zeros(n, p, q);
    for r in 0..n {
        for rp in 0..n {
            let mut block = vec![0.0; p * q];
            for rpp in 0..n {
                let weight = grid.weight(rpp);
                let a = w.block(r, rpp);
                let b = rho.block(rpp, rp);
                for i in 0..p {
                    for k in 0..m {
                        let aik = weight * a[i * m + k];
                        if aik == 0.0 {
                            continue;
                        }
                        for j in 0..q {
                            block[i * q + j] += aik * b[k * q + j];
                        }
                    }
                }
            }
            out.block_mut(r, rp).copy_from_slice(&block);
        }
    }
    Ok(out)
}

/// `out(r) = sum_r' weight(r') w(r, r') field(r')`.
pub fn apply_kernel(w: &KernelField, field: &StateField, grid: &SpatialGrid) -> Result<StateField, FieldError> {
    if w.col_dim() != field.population_dim() || w.n_points() != field.n_points() || w.n_points() != grid.len() {
        return Err(FieldError::DimensionMismatch {
            left: (w.n_points(), w.col_dim()),
            right: (field.n_points(), field.population_dim()),
        });
    }
    let mut out = vec![0.0; grid.len() * w.row_dim()];
    apply_kernel_raw(w, field.values(), grid, &mut out);
    StateField::new(grid.len(), w.row_dim(), out)
}

/// Accumulates `sum_r' weight(r') w(r, r') x(r')` into `out` (point-major slices).
fn apply_kernel_raw(w: &KernelField, x: &[f64], grid: &SpatialGrid, out: &mut [f64]) {
    let n = w.n_points();
    let (rows, cols) = (w.row_dim(), w.col_dim());
    for r in 0..n {
        let o = &mut out[r * rows..(r + 1) * rows];
        for rp in 0..n {
            let weight = grid.weight(rp);
            let b = w.block(r, rp);
            let xv = &x[rp * cols..(rp + 1) * cols];
            for a in 0..rows {
                let mut s = 0.0;
                for c in 0..cols {
                    s += b[a * cols + c] * xv[c];
                }
                o[a] += weight * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_grid, MeasureKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize) -> KernelField {
        let data = (0..n * n * rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        KernelField::new(n, rows, cols, data).unwrap()
    }

    #[test]
    fn gaussian_normalized_to_omega() {
        let g = build_grid(20, MeasureKind::Lebesgue).unwrap();
        let w = gaussian_kernel(&g, 60.0, 2.0).unwrap();
        assert!((hs_norm(&w, &g) - 2.0).abs() < 1e-10);
        let zero = gaussian_kernel(&g, 60.0, 0.0).unwrap();
        assert_eq!(hs_norm(&zero, &g), 0.0);
        let neg = gaussian_kernel(&g, 60.0, -2.0).unwrap();
        assert!((hs_norm(&neg, &g) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_raw_values_on_grid() {
        let g = build_grid(20, MeasureKind::Lebesgue).unwrap();
        let raw = raw_gaussian(&g, 60.0).unwrap();
        assert_eq!(raw.block(3, 3)[0], 1.0);
        // points 0 and 10 sit at distance 0.5
        assert!((raw.block(0, 10)[0] - (-15.0_f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn gaussian_rejects_nonpositive_width() {
        let g = build_grid(4, MeasureKind::Lebesgue).unwrap();
        assert!(matches!(gaussian_kernel(&g, 0.0, 1.0), Err(FieldError::Parameter(_))));
        assert!(gaussian_kernel(&g, -3.0, 1.0).is_err());
    }

    #[test]
    fn hs_norm_examples() {
        let one = build_grid(1, MeasureKind::Counting).unwrap();
        let k = KernelField::new(1, 1, 1, vec![-3.5]).unwrap();
        assert_eq!(hs_norm(&k, &one), 3.5);
        assert_eq!(hs_norm(&KernelField::zeros(1, 1, 1), &one), 0.0);

        let two = build_grid(2, MeasureKind::Counting).unwrap();
        let ones = KernelField::new(2, 1, 1, vec![1.0; 4]).unwrap();
        assert_eq!(hs_norm(&ones, &two), 2.0);
    }

    #[test]
    fn spectral_vs_frobenius_for_diagonal_block() {
        let one = build_grid(1, MeasureKind::Counting).unwrap();
        let k = KernelField::new(1, 2, 2, vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((l2_opnorm(&k, &one) - 4.0).abs() < 1e-12);
        assert!((hs_norm(&k, &one) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_blocks_make_both_norms_equal() {
        let g = build_grid(7, MeasureKind::Lebesgue).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(&mut rng, 7, 1, 1);
        assert_eq!(l2_opnorm(&k, &g), hs_norm(&k, &g));
        assert_eq!(l2_opnorm(&KernelField::zeros(7, 1, 1), &g), 0.0);
    }

    #[test]
    fn dirac_composition_is_identity() {
        for measure in [MeasureKind::Counting, MeasureKind::Lebesgue] {
            let g = build_grid(5, measure).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let w = random_kernel(&mut rng, 5, 2, 2);
            let composed = kernel_compose(&w, &KernelField::dirac(&g, 2), &g).unwrap();
            for (a, b) in composed.data().iter().zip(w.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirac_kernel_applies_as_identity() {
        let g = build_grid(3, MeasureKind::Counting).unwrap();
        let f = StateField::new(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(apply_kernel(&KernelField::dirac(&g, 1), &f, &g).unwrap(), f);
    }

    #[test]
    fn zero_factors_give_zero() {
        let g = build_grid(3, MeasureKind::Counting).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_kernel(&mut rng, 3, 1, 1);
        let c = kernel_compose(&KernelField::zeros(3, 1, 1), &rho, &g).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let f = apply_kernel(&rho, &StateField::zeros(3, 1), &g).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_matrix_vector_product() {
        let g = build_grid(2, MeasureKind::Counting).unwrap();
        let w = KernelField::new(2, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = StateField::new(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(apply_kernel(&w, &f, &g).unwrap().values(), &[17.0, 39.0]);
    }

    #[test]
    fn composition_matches_dense_matrix_product() {
        let g = build_grid(3, MeasureKind::Counting).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = random_kernel(&mut rng, 3, 2, 3);
        let rho = random_kernel(&mut rng, 3, 3, 2);
        let composed = kernel_compose(&w, &rho, &g).unwrap();

        // block matrices flattened as (N*rows) x (N*cols), multiplied naively
        let flat = |k: &KernelField| {
            let (n, p, q) = (k.n_points(), k.row_dim(), k.col_dim());
            let mut m = vec![vec![0.0; n * q]; n * p];
            for r in 0..n {
                for rp in 0..n {
                    for a in 0..p {
                        for b in 0..q {
                            m[r * p + a][rp * q + b] = k.block(r, rp)[a * q + b];
                        }
                    }
                }
            }
            m
        };
        let (a, b, c) = (flat(&w), flat(&rho), flat(&composed));
        for i in 0..a.len() {
            for j in 0..b[0].len() {
                let expected: f64 = (0..b.len()).map(|k| a[i][k] * b[k][j]).sum();
                assert!((c[i][j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_rejects_mismatched_blocks() {
        let g = build_grid(2, MeasureKind::Counting).unwrap();
        let w = KernelField::zeros(2, 1, 2);
        let rho = KernelField::zeros(2, 3, 1);
        assert!(matches!(kernel_compose(&w, &rho, &g), Err(FieldError::DimensionMismatch { .. })));
        let f = StateField::zeros(2, 1);
        assert!(apply_kernel(&w, &f, &g).is_err());
    }

    #[test]
    fn kernel_rejects_non_finite() {
        assert!(KernelField::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn opnorm_never_exceeds_hs_norm(seed in any::<u64>(), n in 1usize..5, rows in 1usize..4, cols in 1usize..4) {
            let g = build_grid(n, MeasureKind::Lebesgue).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, n, rows, cols);
            prop_assert!(l2_opnorm(&k, &g) <= hs_norm(&k, &g) * (1.0 + 1e-12));
        }

        #[test]
        fn composition_is_associative(seed in any::<u64>(), n in 1usize..5) {
            let g = build_grid(n, MeasureKind::Counting).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_kernel(&mut rng, n, 2, 1);
            let b = random_kernel(&mut rng, n, 1, 2);
            let c = random_kernel(&mut rng, n, 2, 2);
            let left = kernel_compose(&kernel_compose(&a, &b, &g).unwrap(), &c, &g).unwrap();
            let right = kernel_compose(&a, &kernel_compose(&b, &c, &g).unwrap(), &g).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn apply_of_composition_is_composition_of_applies(seed in any::<u64>(), n in 1usize..6) {
            let g = build_grid(n, MeasureKind::Lebesgue).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_kernel(&mut rng, n, 2, 2);
            let b = random_kernel(&mut rng, n, 2, 1);
            let f = StateField::new(n, 1, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let lhs = apply_kernel(&kernel_compose(&a, &b, &g).unwrap(), &f, &g).unwrap();
            let rhs = apply_kernel(&a, &apply_kernel(&b, &f, &g).unwrap(), &g).unwrap();
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn gaussian_norm_matches_omega(sigma in 0.1f64..500.0, n in 1usize..40, omega in -5.0f64..5.0) {
            let g = build_grid(n, MeasureKind::Lebesgue).unwrap();
            let w = gaussian_kernel(&g, sigma, omega).unwrap();
            prop_assert!((hs_norm(&w, &g) - omega.abs()).abs() < 1e-10);
        }
    }
}
