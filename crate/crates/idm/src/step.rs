//! Explicit Euler update for a lane of vehicles, with exit handling, an
//! optional externally-controlled lead vehicle, and the exact Jacobian blocks
//! of the whole update.

use difftraffic_core::{LeadBoundary, Mat2, Vec2, VehicleState};
use serde::{Deserialize, Serialize};

use crate::model::{acceleration, acceleration_partials, IdmError, Neighbor};

/// One micro lane. Vehicles are ordered downstream-first: index 0 is the
/// front vehicle, positions strictly decrease along the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroLaneState {
    pub vehicles: Vec<VehicleState>,
    /// Lane length; a vehicle whose position passes this leaves the lane.
    pub length: f64,
    pub lead_boundary: LeadBoundary,
}

impl MicroLaneState {
    /// What vehicle `i` follows: the vehicle ahead, or the lane's lead
    /// boundary for the front vehicle.
    fn leader_of(&self, i: usize) -> Option<Neighbor> {
        if i == 0 {
            match self.lead_boundary {
                LeadBoundary::Free => None,
                LeadBoundary::VirtualLeader { p, v } => Some(Neighbor { p, v, length: 0.0 }),
            }
        } else {
            let h = &self.vehicles[i - 1];
            Some(Neighbor { p: h.p, v: h.v, length: h.params.length })
        }
    }
}

#[derive(Debug, Clone)]
pub struct MicroStepOutput {
    /// Post-step states of the vehicles still on the lane, order preserved.
    pub vehicles: Vec<VehicleState>,
    /// Post-step states of vehicles that crossed the end of the lane.
    pub exited: Vec<VehicleState>,
    /// Per input vehicle: was the speed clamped at zero.
    pub clamped: Vec<bool>,
}

/// Advance every vehicle one step: p' = p + v dt, v' = max(0, v + a dt).
/// `pace_accel` overrides the front vehicle's model acceleration. Vehicles
/// whose new position passes the lane end are split off in `exited`. A
/// non-positive gap is a hard error; the model is undefined through contact.
pub fn micro_step(
    lane: &MicroLaneState,
    dt: f64,
    delta: f64,
    pace_accel: Option<f64>,
) -> Result<MicroStepOutput, IdmError> {
    let n = lane.vehicles.len();
    let mut vehicles = Vec::with_capacity(n);
    let mut exited = Vec::new();
    let mut clamped = vec![false; n];
    for (i, veh) in lane.vehicles.iter().enumerate() {
        let leader = lane.leader_of(i);
        if let Some(h) = leader {
            let gap = h.p - veh.p - h.length;
            if gap <= 0.0 {
                let leader_id = if i == 0 { u64::MAX } else { lane.vehicles[i - 1].id };
                return Err(IdmError::Collision { leader: leader_id, follower: veh.id, gap });
            }
        }
        let a = match (i, pace_accel) {
            (0, Some(ctrl)) => ctrl,
            _ => acceleration(veh.p, veh.v, &veh.params, leader, delta),
        };
        let p_next = veh.p + veh.v * dt;
        let mut v_next = veh.v + a * dt;
        if v_next < 0.0 {
            v_next = 0.0;
            clamped[i] = true;
        }
        let next = VehicleState { id: veh.id, p: p_next, v: v_next, params: veh.params };
        if p_next > lane.length {
            exited.push(next);
        } else {
            vehicles.push(next);
        }
    }
    Ok(MicroStepOutput { vehicles, exited, clamped })
}

/// Jacobian of one vehicle's update (p', v') with respect to its own
/// pre-step coordinates and its leader's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleJacobian {
    pub own: Mat2,
    /// Zero when the vehicle follows nothing (free front vehicle or a
    /// phantom leader, whose coordinates are data, not state).
    pub lead: Mat2,
}

#[derive(Debug, Clone)]
pub struct MicroJacobians {
    /// One block pair per input vehicle, same order as the lane.
    pub vehicles: Vec<VehicleJacobian>,
    /// d v'_0 / d (control acceleration); zero when no control is applied or
    /// the speed clamp pinned the front vehicle.
    pub pace: f64,
}

/// Exact linearization of `micro_step` over the same input set. `clamped`
/// is the mask the forward step recorded; a clamped speed row is constant.
pub fn micro_step_jacobians(
    lane: &MicroLaneState,
    dt: f64,
    delta: f64,
    pace_accel: Option<f64>,
    clamped: &[bool],
) -> MicroJacobians {
    let n = lane.vehicles.len();
    let mut vehicles = Vec::with_capacity(n);
    let mut pace = 0.0;
    for (i, veh) in lane.vehicles.iter().enumerate() {
        let mut own = Mat2::from_rows([1.0, dt], [0.0, 1.0]);
        let mut lead = Mat2::ZERO;
        let paced = i == 0 && pace_accel.is_some();
        if clamped[i] {
            own.0[1] = [0.0, 0.0];
        } else if !paced {
            let partials =
                acceleration_partials(veh.p, veh.v, &veh.params, lane.leader_of(i), delta);
            own.0[1] = [dt * partials.dp, 1.0 + dt * partials.dv];
            if i > 0 {
                lead.0[1] = [dt * partials.dp_lead, dt * partials.dv_lead];
            }
        }
        if paced && !clamped[i] {
            pace = dt;
        }
        vehicles.push(VehicleJacobian { own, lead });
    }
    MicroJacobians { vehicles, pace }
}

/// Pull cotangents on the post-step vehicles back to the pre-step vehicles
/// and the control. `lambda_out` is indexed like the input set (exited
/// vehicles simply carry zero cotangent).
pub fn micro_step_adjoint(jacs: &MicroJacobians, lambda_out: &[Vec2]) -> (Vec<Vec2>, f64) {
    let n = lambda_out.len();
    let mut lambda_in = vec![Vec2::ZERO; n];
    for i in 0..n {
        lambda_in[i] += jacs.vehicles[i].own.tr_mul_vec(lambda_out[i]);
        if i + 1 < n {
            // Vehicle i is the leader of vehicle i+1.
            lambda_in[i] += jacs.vehicles[i + 1].lead.tr_mul_vec(lambda_out[i + 1]);
        }
    }
    let pace = if n > 0 { jacs.pace * lambda_out[0].1 } else { 0.0 };
    (lambda_in, pace)
}
