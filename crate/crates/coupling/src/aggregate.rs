//! Micro → macro conversion: window aggregation.
//!
//! The downstream end of a feeding micro lane is observed through a window
//! `(lo, hi]` whose width matches the receiving macro lane's cell size. The
//! vehicles whose front position lies in the window are averaged into a cell
//! state: density is the occupancy (summed vehicle lengths over window
//! width, clamped to jam), velocity is the mean speed, and the momentum
//! variable follows from the equilibrium relation. The result drives the
//! receiving lane's upstream inflow boundary.
//!
//! The reverse-mode rules are exact: the mean spreads a velocity adjoint
//! uniformly over the members, and the occupancy routes a density adjoint to
//! each member's existence weight in proportion to its length (zero when the
//! clamp pinned the density).

use difftraffic_core::linalg::Vec2;
use difftraffic_core::state::{pow_g, u_eq, u_eq_prime, CellState, VehicleState};
use serde::{Deserialize, Serialize};

/// Aggregated window contents, with the membership needed for the backward
/// pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Cell state written to the receiving lane's inflow boundary.
    pub q: CellState,
    /// Mean member speed (zero for an empty window).
    pub u_mean: f64,
    /// Ids of the member vehicles, in lane order.
    pub member_ids: Vec<u64>,
    /// Lengths of the member vehicles, aligned with `member_ids`.
    pub member_lens: Vec<f64>,
    /// Whether the occupancy exceeded jam density and was clamped.
    pub rho_clamped: bool,
}

impl Aggregate {
    pub fn count(&self) -> usize {
        self.member_ids.len()
    }
}

/// Aggregate the vehicles whose front position lies in `(window_lo,
/// window_hi]` into a cell state under the receiving lane's parameters.
pub fn aggregate_window(
    vehicles: &[VehicleState],
    window_lo: f64,
    window_hi: f64,
    u_max: f64,
    gamma: f64,
) -> Aggregate {
    let width = window_hi - window_lo;
    debug_assert!(width > 0.0, "aggregation window must have positive width");

    let mut member_ids = Vec::new();
    let mut member_lens = Vec::new();
    let mut v_sum = 0.0;
    let mut len_sum = 0.0;
    for veh in vehicles {
        if veh.p > window_lo && veh.p <= window_hi {
            member_ids.push(veh.id);
            member_lens.push(veh.params.length);
            v_sum += veh.v;
            len_sum += veh.params.length;
        }
    }

    if member_ids.is_empty() {
        return Aggregate {
            q: CellState::new(0.0, 0.0),
            u_mean: 0.0,
            member_ids,
            member_lens,
            rho_clamped: false,
        };
    }

    let rho_raw = len_sum / width;
    let rho_clamped = rho_raw > 1.0;
    let rho = rho_raw.min(1.0);
    let u_mean = v_sum / member_ids.len() as f64;
    let y = rho * (u_mean - u_eq(rho, u_max, gamma));
    Aggregate { q: CellState::new(rho, y), u_mean, member_ids, member_lens, rho_clamped }
}

/// Adjoint of the aggregated state with respect to density and mean speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflowChain {
    pub g_rho: f64,
    pub g_u: f64,
    pub g_u_max: f64,
}

/// Pull an adjoint on the written inflow state `(rho, y)` back to the
/// aggregation outputs `(rho, u_mean)` through `y = rho·(u − u_eq(rho))`.
///
/// `u_max` and `gamma` belong to the receiving macro lane. An empty window
/// wrote a vacuum state with no dependence on anything, so everything is
/// zero.
pub fn inflow_state_adjoint(
    agg: &Aggregate,
    g_inflow: Vec2,
    u_max: f64,
    gamma: f64,
) -> InflowChain {
    if agg.count() == 0 {
        return InflowChain { g_rho: 0.0, g_u: 0.0, g_u_max: 0.0 };
    }
    let rho = agg.q.rho;
    let dy_drho = agg.u_mean - u_eq(rho, u_max, gamma) - rho * u_eq_prime(rho, u_max, gamma);
    let dy_du = rho;
    let dy_du_max = -rho * (1.0 - pow_g(rho, gamma));
    InflowChain {
        g_rho: g_inflow.0 + g_inflow.1 * dy_drho,
        g_u: g_inflow.1 * dy_du,
        g_u_max: g_inflow.1 * dy_du_max,
    }
}

/// Per-member adjoints of one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateAdjoint {
    /// dL/dv for every member (the mean spreads uniformly).
    pub dv_each: f64,
    /// dL/dw per member, aligned with `member_ids`: the sensitivity to each
    /// member's existence weight, routed onward to the emission surrogate.
    pub dw: Vec<f64>,
}

/// Route the aggregation-output adjoints to the member vehicles.
pub fn backward_through_aggregation(
    agg: &Aggregate,
    chain: &InflowChain,
    window_width: f64,
) -> AggregateAdjoint {
    let n = agg.count();
    if n == 0 {
        return AggregateAdjoint { dv_each: 0.0, dw: Vec::new() };
    }
    let dv_each = chain.g_u / n as f64;
    let dw = if agg.rho_clamped {
        vec![0.0; n]
    } else {
        agg.member_lens.iter().map(|len| chain.g_rho * len / window_width).collect()
    };
    AggregateAdjoint { dv_each, dw }
}
