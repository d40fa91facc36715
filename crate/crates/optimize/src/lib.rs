//! Gradient-based drivers on top of the adjoint engine: initial-state
//! estimation from a recorded final state, pace-car acceleration control,
//! and signal green-time control. All three share one projected
//! gradient-search loop that consumes analytical gradient bundles, rejects
//! iterates whose rollout fails, and records a per-iteration history.

mod descent;
mod estimate;
mod pace;
mod problem;
mod signal;

pub use descent::{
    drive, write_history_csv, DescentSettings, DriveResult, Evaluation, IterationRecord, Sense,
};
pub use estimate::{
    estimate_initial_state, estimation_gradient, estimation_loss, macro_cells, EstimationProblem,
    EstimationResult,
};
pub use pace::{follower_speed_frames, optimize_pace_car, pace_car_reward, pace_rollout};
pub use problem::{ControlKind, ControlProblem, RewardConstants};
pub use signal::{
    measure_signal_episode, optimize_signal_timing, signal_reward, signal_rollout,
    SignalMeasurement, SignalResult,
};

use thiserror::Error;

/// Failure modes of the drivers in this crate.
#[derive(Debug, Error)]
pub enum OptimizeError {
    /// The problem description is inconsistent.
    #[error("ill-posed problem: {0}")]
    BadProblem(String),
    /// Paired state shapes differ.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A rollout failed to simulate or differentiate; the search treats this
    /// as a rejected iterate.
    #[error("rollout failed: {0}")]
    Rollout(String),
    /// The starting point itself failed to evaluate.
    #[error("initial point does not evaluate: {0}")]
    InitialRollout(String),
}
