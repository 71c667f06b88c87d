//! Spatial grid, fields, kernels and their norms.

mod activation;
mod grid;
mod kernel;
mod state;

pub use activation::ActivationSpec;
pub use grid::{build_grid, DistanceKind, MeasureKind, SpatialGrid};
pub use kernel::{
    apply_kernel, gaussian_kernel, hs_norm, kernel_compose, l2_opnorm, raw_gaussian, spectral_norm, KernelField,
};
pub use state::{field_l2_norm, weighted_l2_norm, StateField};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("grid must contain at least one point")]
    EmptyGrid,
    #[error("expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}
