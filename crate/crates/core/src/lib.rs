//! Delayed neural fields with adaptive kernel observers and feedback.

pub mod analysis;
pub mod control;
pub mod delay;
pub mod experiment;
pub mod field;
pub mod observer;

use delay::DelayError;
use field::FieldError;

/// Errors of the observer, controller, analysis and experiment layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Field(#[from] FieldError),
    /// Strong dissipativity fails: `l22 ||w22|| >= 1`.
    #[error("unmeasured subsystem is not dissipative: l22 * ||w22|| = {product}")]
    Dissipativity { product: f64 },
    /// A hypothesis of the simultaneous feedback is violated.
    #[error("restriction ({item}) violated: {reason}")]
    Restriction { item: &'static str, reason: String },
    #[error("fixed-point iteration stopped after {iterations} steps with residual {residual}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl Error {
    /// Whether the failure is a numerical abort rather than a bad setup.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::Delay(DelayError::NonFinite { .. }) | Self::NoConvergence { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
