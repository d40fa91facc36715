//! Conversions between the two traffic representations.
//!
//! A macro lane that feeds a micro lane drains mass through a *flux
//! capacitor*: each step the mass flux through the boundary accumulates as a
//! fractional vehicle count, and every unit crossing releases one discrete
//! vehicle at the micro entrance. A micro lane that feeds a macro lane is
//! *aggregated*: the vehicles inside a window at the downstream end are
//! averaged into a cell state that drives the macro lane's inflow boundary.
//!
//! Both directions come with the reverse-mode rules the adjoint engine needs:
//! aggregation is differentiable exactly, emission through an (optional)
//! interval surrogate that spreads a released vehicle's weight over the steps
//! that charged it.

mod aggregate;
mod capacitor;

pub use aggregate::{
    aggregate_window, backward_through_aggregation, inflow_state_adjoint, Aggregate,
    AggregateAdjoint, InflowChain,
};
pub use capacitor::{
    backward_through_emission, can_place, capacitor_advance, capacitor_increment,
    emission_velocity, emission_velocity_partials, sample_poisson, CapacitorState, EmissionCredit,
};
