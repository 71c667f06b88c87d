use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::field::{KernelField, SpatialGrid};
use crate::{Error, Result};

/// Uniformly sampled vector signal, row-major `(steps, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub t0: f64,
    pub dt: f64,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SampledSignal {
    pub fn from_fn(t0: f64, dt: f64, steps: usize, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut data = vec![0.0; steps * dim];
        for k in 0..steps {
            f(t0 + k as f64 * dt, &mut data[k * dim..(k + 1) * dim]);
        }
        Self { t0, dt, dim, data }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Signal shifted later in time by `steps` samples, `g(t - steps dt)`.
    pub fn delayed(&self, steps: usize) -> Self {
        let m = self.len().saturating_sub(steps);
        Self {
            t0: self.t0 + steps as f64 * self.dt,
            dt: self.dt,
            dim: self.dim,
            data: self.data[..m * self.dim].to_vec(),
        }
    }

    /// `W g`.
    pub fn mapped(&self, w: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(self.len() * w.nrows());
        for k in 0..self.len() {
            let v = w * nalgebra::DVector::from_column_slice(self.sample(k));
            data.extend(v.iter());
        }
        Self {
            t0: self.t0,
            dt: self.dt,
            dim: w.nrows(),
            data,
        }
    }
}

/// Inner product and excitation target of the PE test.
#[derive(Debug, Clone, PartialEq)]
pub struct PeMetric {
    /// Quadrature weights of the inner product, one per component.
    pub weights: Vec<f64>,
    /// Operator `P`, `None` for the identity.
    pub p: Option<DMatrix<f64>>,
    /// Weights of the norm on the image of `P`.
    pub target_weights: Vec<f64>,
}

impl PeMetric {
    /// Euclidean inner product and `P = Id`.
    pub fn euclidean(dim: usize) -> Self {
        Self {
            weights: vec![1.0; dim],
            p: None,
            target_weights: vec![1.0; dim],
        }
    }

    /// Grid inner product for `pop_dim` components per point, `P = Id`.
    pub fn grid(grid: &SpatialGrid, pop_dim: usize) -> Self {
        let weights: Vec<f64> = (0..grid.len() * pop_dim).map(|k| grid.weight(k / pop_dim)).collect();
        Self {
            target_weights: weights.clone(),
            weights,
            p: None,
        }
    }

    /// Grid inner product; `P` is the integral operator of a weighting
    /// kernel, `None` meaning the Dirac mass.
    pub fn weighted(grid: &SpatialGrid, rho: Option<&KernelField>) -> Self {
        let dim = rho.map_or(1, |r| r.row_dim());
        let mut m = Self::grid(grid, dim);
        m.p = rho.map(|r| r.to_operator_matrix(grid));
        m
    }

    pub fn with_operator(mut self, p: DMatrix<f64>, target_weights: Vec<f64>) -> Self {
        self.p = Some(p);
        self.target_weights = target_weights;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeReport {
    pub window: f64,
    pub start: f64,
    /// Largest `kappa` with `int |<g, x>|^2 >= kappa ||P x||^2` on the window.
    pub kappa: f64,
    pub lambda_max: f64,
    /// `lambda_max / kappa`, infinite for a singular Gram operator.
    pub condition: f64,
}

/// Trapezoidal `int g g^T` over `count` intervals from sample `first`.
pub fn gram_matrix(signal: &SampledSignal, first: usize, count: usize) -> DMatrix<f64> {
    let d = signal.dim;
    let mut g = DMatrix::zeros(d, d);
    for k in first..=first + count {
        let c = if k == first || k == first + count { 0.5 } else { 1.0 } * signal.dt;
        let s = signal.sample(k);
        for i in 0..d {
            let si = c * s[i];
            if si == 0.0 {
                continue;
            }
            for j in i..d {
                g[(i, j)] += si * s[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

fn symmetric_eigen(m: DMatrix<f64>) -> Vec<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Extreme generalized eigenvalues of `(D G D, P^T D_Y P)` on the directions
/// `P` sees, after minimizing over its null space.
pub fn pe_extremes(gram: &DMatrix<f64>, metric: &PeMetric) -> Result<(f64, f64)> {
    let d = gram.nrows();
    if metric.weights.len() != d {
        return Err(Error::Config(format!(
            "metric has {} weights, signal dimension is {d}",
            metric.weights.len()
        )));
    }
    let dw = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(metric.weights.clone()));
    let a = &dw * gram * &dw;
    let b = match &metric.p {
        None => dw.clone(),
        Some(p) => {
            let dy = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(metric.target_weights.clone()));
            p.transpose() * dy * p
        }
    };
    let eb = SymmetricEigen::new((&b + b.transpose()) * 0.5);
    let scale = eb.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * d as f64;
    let (range, null): (Vec<usize>, Vec<usize>) = (0..d).partition(|&k| eb.eigenvalues[k] > tol);
    if range.is_empty() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let q = &eb.eigenvectors;
    let pick = |idx: &[usize]| DMatrix::from_fn(d, idx.len(), |i, j| q[(i, idx[j])]);
    let qr = pick(&range);
    let qn = pick(&null);
    let arr = qr.transpose() * &a * &qr;
    let schur = if null.is_empty() {
        arr
    } else {
        let ann = qn.transpose() * &a * &qn;
        let anr = qn.transpose() * &a * &qr;
        let eps = 1e-12 * ann.amax().max(f64::MIN_POSITIVE);
        let pinv = ann
            .pseudo_inverse(eps)
            .map_err(|e| Error::Config(e.to_string()))?;
        &arr - anr.transpose() * pinv * &anr
    };
    // B is diagonal in the eigenbasis
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        range.len(),
        range.iter().map(|&k| 1.0 / eb.eigenvalues[k].sqrt()),
    ));
    let ev = symmetric_eigen(&inv_sqrt * schur * &inv_sqrt);
    Ok((ev[0].max(0.0), *ev.last().unwrap()))
}

fn window_steps(signal: &SampledSignal, window: f64) -> Result<usize> {
    let steps = (window / signal.dt).round();
    if steps < 1.0 || ((steps * signal.dt - window).abs() > 1e-9 * window.max(1.0)) {
        return Err(Error::Config(format!(
            "window {window} is not a multiple of the sample step {}",
            signal.dt
        )));
    }
    Ok(steps as usize)
}

/// PE constants of `signal` on `[start, start + window]`.
pub fn pe_gram(signal: &SampledSignal, start: f64, window: f64, metric: &PeMetric) -> Result<PeReport> {
    let steps = window_steps(signal, window)?;
    let first = ((start - signal.t0) / signal.dt).round();
    if first < 0.0 || first as usize + steps >= signal.len() {
        return Err(Error::Config(format!(
            "window [{start}, {}] exceeds the samples on [{}, {}]",
            start + window,
            signal.t0,
            signal.t_end()
        )));
    }
    let first = first as usize;
    let (kappa, lambda_max) = pe_extremes(&gram_matrix(signal, first, steps), metric)?;
    Ok(PeReport {
        window,
        start: signal.t0 + first as f64 * signal.dt,
        kappa,
        lambda_max,
        condition: if kappa > 0.0 { lambda_max / kappa } else { f64::INFINITY },
    })
}

/// Sliding-window `kappa` every `stride` samples.
pub fn kappa_timeline(signal: &SampledSignal, window: f64, stride: usize, metric: &PeMetric) -> Result<Vec<(f64, f64)>> {
    let steps = window_steps(signal, window)?;
    let stride = stride.max(1);
    let starts: Vec<usize> = (0..signal.len().saturating_sub(steps)).step_by(stride).collect();
    let eval = |&first: &usize| -> Result<(f64, f64)> {
        let (k, _) = pe_extremes(&gram_matrix(signal, first, steps), metric)?;
        Ok((signal.t0 + first as f64 * signal.dt, k))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        starts.par_iter().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.iter().map(eval).collect()
    }
}

/// Smallest `kappa` over a timeline and where it occurs.
pub fn worst_window(timeline: &[(f64, f64)]) -> Option<(f64, f64)> {
    timeline.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))
}
