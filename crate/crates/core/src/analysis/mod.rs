//! Lyapunov certificate of the estimation error and persistence of
//! excitation measurements.

mod lyapunov;
mod pe;
mod suite;

pub use lyapunov::{
    check_decrease, lyapunov_eval, ErrorState, LyapunovConstants, LyapunovMonitor, LyapunovReport, LyapunovSample,
    LyapunovValue,
};
pub use pe::{gram_matrix, kappa_timeline, pe_extremes, pe_gram, worst_window, PeMetric, PeReport, SampledSignal};
pub use suite::{pe_property_suite, PeCheck, PeSuiteOptions, PeSuiteReport};
