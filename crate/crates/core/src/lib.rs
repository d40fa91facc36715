//! Shared foundation for the difftraffic workspace: cell/vehicle state types,
//! the scenario file schema, network topology, validation, and the small
//! fixed-size linear algebra the solvers and adjoint engine exchange.

pub mod builders;
pub mod config;
pub mod error;
pub mod hash;
pub mod linalg;
pub mod scenario;
pub mod state;
pub mod topology;
pub mod validate;

pub use config::{ConversionMode, SolverConfig};
pub use error::ScenarioError;
pub use linalg::{Mat2, Vec2};
pub use scenario::{ControlsSpec, IdmRanges, LaneSpec, PaceSpec, Scenario, SignalSpec, VehicleSpec};
pub use state::{
    velocity_from_state, BoundaryCondition, CellState, IdmParams, LeadBoundary, MacroLaneState,
    VehicleState, Velocity, EPS_RHO,
};
pub use topology::{LaneKind, Link};
pub use validate::{validate_scenario, Violation};
