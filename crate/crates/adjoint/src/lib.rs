//! Hybrid network simulation with reverse-mode differentiation.
//!
//! The engine composes the macro finite-volume step, the micro car-following
//! step, and the two conversion directions into one network step, records
//! every step's structure on a tape (full state checkpoints plus the discrete
//! decisions: interface wave patterns, clamp masks, emissions, exits, window
//! membership), and then runs the reverse sweep: transposed Jacobian blocks
//! recomputed from the checkpoints, applied step by step from the end of the
//! run to the beginning. The result is the gradient of any seeded loss with
//! respect to initial cell states, initial vehicle states, per-step controls,
//! and per-lane speed limits — at a cost independent of the number of those
//! inputs.
//!
//! A finite-difference oracle over the same input set provides the
//! independent cross-check used throughout the test suite.

mod backward;
mod bundle;
mod fd;
mod forward;
mod network;
mod tape;

pub use backward::StateSeed;
pub use difftraffic_arz::CellClamp;
pub use bundle::GradientBundle;
pub use fd::{directional_derivative, finite_diff_gradient, perturbed_scenario, zero_bundle};
pub use forward::{
    run_scenario, AggRecord, EmissionRecord, MacroStepRecord, MicroStepRecord, SimAbort,
    StepRecord,
};
pub use network::{
    signal_weight_partials, signal_weights, CapacitorRuntime, Engine, EngineError, MassAudit,
    NetworkState,
};
pub use tape::StepTape;
