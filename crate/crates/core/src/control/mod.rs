//! Output feedback laws: exact stabilization with a reduced observer, and
//! practical stabilization with simultaneous kernel estimation.

mod baseline;
mod exact;
mod restrictions;
mod signal;
mod simultaneous;
mod zref;

pub use baseline::HighGainLoop;
pub use exact::{
    control_exact, reduced_observer_rhs, ExactInputs, ExactLoop, ReducedInputs, ReducedRates, ReducedSlices,
    EXACT_METRICS,
};
pub use restrictions::{audit_restrictions, ItemStatus, RestrictionAudit, RestrictionItem};
pub use signal::{make_signal, SignalSpec};
pub use simultaneous::{control_sim, sim_observer_rhs, SimInputs, SimLoop, SimRates, SIM_METRICS};
pub use zref::{solve_zref2, ZrefSolution};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ExactStabilization,
    SimultaneousPe,
}

/// Controller settings; exact stabilization ignores the excitation and
/// always applies `u2 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: ControlMode,
    pub alpha: f64,
    /// Spatially uniform reference of the measured population.
    #[serde(default)]
    pub zref1: f64,
    #[serde(default)]
    pub excitation: SignalSpec,
}
