//! Noise splitting, mass decomposition and the Galton–Watson surrogate for
//! repeated peak escalation.

mod decompose;
mod gw;
mod split;

pub use decompose::{mass_decompose, DecomposeSpec, Decomposition};
pub use gw::{
    gw_extinction, gw_mean, gw_simulate, gw_sweep, GwMean, GwModel, GwSimulation, GwSweepRow,
    SuccessEvent, DEFAULT_SWEEP, GW_CSV_HEADER,
};
pub use split::{
    simulate_split_system, simulate_split_system_with, split_coefficient, CoefficientRule, split_equivalence_check, telescoping_error,
    EquivalenceReport, SplitTrajectory,
};
