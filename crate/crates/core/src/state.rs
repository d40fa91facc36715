//! Cell and vehicle state types plus the constitutive velocity relations that
//! everything downstream (flux, Riemann solutions, conversions, validation)
//! is built on.
//!
//! Macro state is stored in conserved variables q = (rho, y): rho is the
//! normalized density in cars per car length, y = rho (u - u_eq(rho)) is the
//! relative flow. Velocity is always *derived*, u = y/rho + u_eq(rho), with
//! u_eq(rho) = u_max (1 - rho^gamma).

use serde::{Deserialize, Serialize};

/// Densities at or below this are treated as vacuum: velocity defaults to
/// u_max, fluxes and gradients are zero.
pub const EPS_RHO: f64 = 1e-8;

/// Conserved state of one macro cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    pub rho: f64,
    pub y: f64,
}

impl CellState {
    pub fn new(rho: f64, y: f64) -> Self {
        CellState { rho, y }
    }

    /// Build a cell from density and velocity.
    pub fn from_velocity(rho: f64, u: f64, u_max: f64, gamma: f64) -> Self {
        CellState { rho, y: rho * (u - u_eq(rho, u_max, gamma)) }
    }

    pub fn is_vacuum(&self) -> bool {
        self.rho <= EPS_RHO
    }
}

/// Equilibrium speed u_eq(rho) = u_max (1 - rho^gamma).
pub fn u_eq(rho: f64, u_max: f64, gamma: f64) -> f64 {
    u_max * (1.0 - pow_g(rho, gamma))
}

/// d u_eq / d rho = -u_max gamma rho^(gamma-1).
pub fn u_eq_prime(rho: f64, u_max: f64, gamma: f64) -> f64 {
    -u_max * gamma * pow_g(rho, gamma - 1.0)
}

/// rho^gamma with a square-root fast path for the common gamma = 1/2.
#[inline]
pub fn pow_g(rho: f64, gamma: f64) -> f64 {
    if gamma == 0.5 {
        rho.sqrt()
    } else if gamma == -0.5 {
        1.0 / rho.sqrt()
    } else if gamma == 1.0 {
        rho
    } else if gamma == 2.0 {
        rho * rho
    } else {
        rho.powf(gamma)
    }
}

/// A derived velocity, tagged when the vacuum convention was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub u: f64,
    pub vacuum: bool,
}

/// u = y/rho + u_eq(rho); vacuum cells report u = u_max with the flag set.
pub fn velocity_from_state(q: CellState, u_max: f64, gamma: f64) -> Velocity {
    if q.rho <= EPS_RHO {
        Velocity { u: u_max, vacuum: true }
    } else {
        Velocity { u: q.y / q.rho + u_eq(q.rho, u_max, gamma), vacuum: false }
    }
}

/// Per-vehicle car-following parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Minimum bumper-to-bumper spacing.
    pub s_min: f64,
    /// Preferred time headway.
    pub t_pref: f64,
    /// Maximum acceleration.
    pub a_max: f64,
    /// Preferred (comfortable) deceleration.
    pub a_pref: f64,
    /// Free-road target speed.
    pub v_targ: f64,
    /// Vehicle length.
    pub length: f64,
}

/// One discrete vehicle. `id` is stable across the run; emitted vehicles get
/// fresh ids from a global counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub p: f64,
    pub v: f64,
    pub params: IdmParams,
}

/// What the front-most vehicle of a micro lane follows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeadBoundary {
    /// Open road ahead: free acceleration toward v_targ.
    #[default]
    Free,
    /// A fixed phantom vehicle (e.g. a stop line) at position p moving at v.
    VirtualLeader { p: f64, v: f64 },
}

/// Ghost-cell recipe for one end of a macro lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Prescribed exterior state.
    Inflow { q: CellState },
    /// Zero-gradient: the ghost copies the edge cell.
    Outflow,
    /// Sealed end; no mass crosses.
    Wall,
}

/// One macro lane: uniform grid of cells plus its boundary recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLaneState {
    pub cells: Vec<CellState>,
    /// Cell width in meters.
    pub dx: f64,
    /// Speed limit in m/s.
    pub u_max: f64,
    pub upstream_boundary: BoundaryCondition,
    pub downstream_boundary: BoundaryCondition,
}

impl MacroLaneState {
    /// Total normalized mass, sum of rho * dx.
    pub fn mass(&self) -> f64 {
        self.cells.iter().map(|c| c.rho * self.dx).sum()
    }
}
