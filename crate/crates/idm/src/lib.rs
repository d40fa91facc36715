//! Microscopic lane dynamics: per-vehicle car-following acceleration, the
//! explicit Euler step over a lane of vehicles, and the analytical Jacobian
//! blocks of that step.

pub mod model;
pub mod step;

pub use model::{acceleration, acceleration_partials, AccelPartials, IdmError, Neighbor};
pub use step::{
    micro_step, micro_step_adjoint, micro_step_jacobians, MicroJacobians, MicroLaneState,
    MicroStepOutput, VehicleJacobian,
};
