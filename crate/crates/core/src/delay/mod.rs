//! Delay histories, the fixed-step integrator, and the delayed plant.

mod history;
mod integrate;
mod io;
mod model;

pub use history::{HistoryBuffer, Interp};
pub use integrate::{
    integrate, Component, ComponentShape, ComponentView, DelaySystem, FieldHistory, IntegrateOptions,
    LayoutBuilder, Past, SimState, StateLayout, StepObserver, SumView, Trajectory,
};
pub use io::{read_snapshot, read_trajectory_csv, write_snapshot, write_trajectory_csv, SnapshotDims, SNAPSHOT_MAGIC};
pub use model::{
    bibs_bound, plant_rhs, synaptic_drive, Coupling, DelaySpec, DelayedActivation, InputField, ModelParams, PlantSystem,
    SharedInput, ZeroInput,
};

use crate::field::FieldError;

#[derive(Debug, thiserror::Error)]
pub enum DelayError {
    #[error("history query at t = {t_query} precedes the earliest sample {earliest}")]
    HistoryUnderflow { t_query: f64, earliest: f64 },
    #[error("history query at t = {t_query} is past the latest sample {latest}")]
    HistoryOverflow { t_query: f64, latest: f64 },
    #[error("non-finite value in {component} at t = {t}")]
    NonFinite {
        t: f64,
        component: String,
        /// Last state before the failing step.
        snapshot: Box<SimState>,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for DelayError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
