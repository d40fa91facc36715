//! Interface Riemann solver. Given left/right cell states it classifies the
//! wave pattern and returns the state q(0) sitting on the interface, which is
//! all the finite-volume flux needs.
//!
//! Classification happens in velocity variables. With a left vacuum the
//! interface is empty. Equal velocities transport the left state. A faster
//! left side drives a shock whose side of the interface is decided by the
//! shock speed. A slower left side opens a rarefaction: the interface state is
//! the left state, the middle state, or the sonic point of the fan, decided by
//! the first-family characteristic speeds on each side of the fan. A right
//! vacuum is the limiting rarefaction and reuses the same rule with the middle
//! state gone.

use difftraffic_core::state::{pow_g, u_eq};
use difftraffic_core::{CellState, EPS_RHO};
use serde::{Deserialize, Serialize};

/// Which formula produced the interface state. This is the tag replayed and
/// re-checked during backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiemannCase {
    /// u_l = u_r exactly; contact only, interface takes the left state.
    EqualVelocity,
    /// Left side is vacuum; nothing crosses.
    LeftVacuum,
    /// Shock moving right or standing; interface takes the left state.
    ShockLeft,
    /// Shock moving left; interface takes the middle state.
    ShockMiddle,
    /// Rarefaction entirely to the right; interface takes the left state.
    RarefactionLeft,
    /// Rarefaction entirely to the left; interface takes the middle state.
    RarefactionMiddle,
    /// Transonic rarefaction; interface takes the sonic fan state.
    RarefactionFan,
}

/// The value family of a case, which is what gradient dispatch keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiemannBranch {
    Vacuum,
    Left,
    Middle,
    Fan,
}

impl RiemannCase {
    pub fn branch(self) -> RiemannBranch {
        match self {
            RiemannCase::LeftVacuum => RiemannBranch::Vacuum,
            RiemannCase::EqualVelocity | RiemannCase::ShockLeft | RiemannCase::RarefactionLeft => {
                RiemannBranch::Left
            }
            RiemannCase::ShockMiddle | RiemannCase::RarefactionMiddle => RiemannBranch::Middle,
            RiemannCase::RarefactionFan => RiemannBranch::Fan,
        }
    }
}

/// Interface state plus everything the gradient pass wants to reuse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannSolution {
    pub q0: CellState,
    pub case: RiemannCase,
    /// Left velocity (0 when the left side is vacuum).
    pub u_l: f64,
    /// Right velocity (u_max convention when the right side is vacuum).
    pub u_r: f64,
    /// Middle-state density; 0 when the case has no middle state.
    pub rho_m: f64,
    /// Upper bound on |wave speed| across the fan, for CFL accounting.
    pub max_speed: f64,
}

fn velocity(q: CellState, u_max: f64, gamma: f64) -> f64 {
    q.y / q.rho + u_eq(q.rho, u_max, gamma)
}

/// First-family characteristic speed at density `rho` and velocity `u`.
fn lambda1(rho: f64, u: f64, u_max: f64, gamma: f64) -> f64 {
    u - u_max * gamma * pow_g(rho, gamma)
}

/// Middle state: density from the 1-shock/1-rarefaction relation
/// rho_m^gamma = rho_l^gamma + (u_l - u_r)/u_max, velocity from the
/// 2-contact (u_m = u_r).
fn middle_state(rho_l: f64, u_l: f64, u_r: f64, u_max: f64, gamma: f64) -> (f64, f64) {
    let base = (pow_g(rho_l, gamma) + (u_l - u_r) / u_max).max(0.0);
    (pow_g(base, 1.0 / gamma), u_r)
}

/// Sonic state of a left rarefaction fan: along the fan u + u_max rho^gamma
/// is invariant and the self-similar speed is lambda_1; setting lambda_1 = 0
/// gives rho(0) = (I / ((gamma+1) u_max))^(1/gamma), u(0) = gamma/(gamma+1) I
/// with I = u_l + u_max rho_l^gamma.
fn fan_state(rho_l: f64, u_l: f64, u_max: f64, gamma: f64) -> (f64, f64) {
    let invariant = u_l + u_max * pow_g(rho_l, gamma);
    let rho0 = pow_g(invariant / ((gamma + 1.0) * u_max), 1.0 / gamma);
    let u0 = gamma / (gamma + 1.0) * invariant;
    (rho0, u0)
}

fn cell_from(rho: f64, u: f64, u_max: f64, gamma: f64) -> CellState {
    CellState { rho, y: rho * (u - u_eq(rho, u_max, gamma)) }
}

pub fn solve_riemann(q_l: CellState, q_r: CellState, u_max: f64, gamma: f64) -> RiemannSolution {
    if q_l.rho <= EPS_RHO {
        // Nothing on the left: the interface sits in vacuum. The right state
        // only recedes (information moves at u_r >= 0 away or the right
        // rarefies into the gap from its own side).
        let u_r = if q_r.rho <= EPS_RHO { u_max } else { velocity(q_r, u_max, gamma) };
        let max_speed = if q_r.rho <= EPS_RHO {
            0.0
        } else {
            u_r.abs().max(lambda1(q_r.rho, u_r, u_max, gamma).abs())
        };
        return RiemannSolution {
            q0: CellState::new(0.0, 0.0),
            case: RiemannCase::LeftVacuum,
            u_l: 0.0,
            u_r,
            rho_m: 0.0,
            max_speed,
        };
    }

    let u_l = velocity(q_l, u_max, gamma);
    let lam_l = lambda1(q_l.rho, u_l, u_max, gamma);
    let speed_l = u_l.abs().max(lam_l.abs());

    if q_r.rho <= EPS_RHO {
        // Rarefaction into vacuum: only the left-edge characteristic decides.
        let (case, q0) = if lam_l >= 0.0 {
            (RiemannCase::RarefactionLeft, q_l)
        } else {
            let (rho0, u0) = fan_state(q_l.rho, u_l, u_max, gamma);
            (RiemannCase::RarefactionFan, cell_from(rho0, u0, u_max, gamma))
        };
        return RiemannSolution {
            q0,
            case,
            u_l,
            u_r: u_max,
            rho_m: 0.0,
            max_speed: speed_l.max(u_l + u_max * pow_g(q_l.rho, gamma)),
        };
    }

    let u_r = velocity(q_r, u_max, gamma);
    let lam_r = lambda1(q_r.rho, u_r, u_max, gamma);
    let speed_lr = speed_l.max(u_r.abs()).max(lam_r.abs());

    if u_l == u_r {
        return RiemannSolution {
            q0: q_l,
            case: RiemannCase::EqualVelocity,
            u_l,
            u_r,
            rho_m: 0.0,
            max_speed: speed_lr,
        };
    }

    if u_l > u_r {
        // Compression: 1-shock then 2-contact. rho_m > rho_l strictly.
        let (rho_m, u_m) = middle_state(q_l.rho, u_l, u_r, u_max, gamma);
        let shock_speed = (rho_m * u_m - q_l.rho * u_l) / (rho_m - q_l.rho);
        let max_speed = speed_lr.max(shock_speed.abs()).max(u_m.abs());
        let (case, q0) = if shock_speed >= 0.0 {
            (RiemannCase::ShockLeft, q_l)
        } else {
            (RiemannCase::ShockMiddle, cell_from(rho_m, u_m, u_max, gamma))
        };
        return RiemannSolution { q0, case, u_l, u_r, rho_m, max_speed };
    }

    // Expansion: 1-rarefaction then 2-contact.
    if u_l <= u_r - u_max * pow_g(q_l.rho, gamma) {
        // The middle state degenerates to vacuum; same rule as a vacuum right.
        let (case, q0) = if lam_l >= 0.0 {
            (RiemannCase::RarefactionLeft, q_l)
        } else {
            let (rho0, u0) = fan_state(q_l.rho, u_l, u_max, gamma);
            (RiemannCase::RarefactionFan, cell_from(rho0, u0, u_max, gamma))
        };
        return RiemannSolution {
            q0,
            case,
            u_l,
            u_r,
            rho_m: 0.0,
            max_speed: speed_lr.max(u_l + u_max * pow_g(q_l.rho, gamma)),
        };
    }

    let (rho_m, u_m) = middle_state(q_l.rho, u_l, u_r, u_max, gamma);
    let lam_m = lambda1(rho_m, u_m, u_max, gamma);
    let max_speed = speed_lr.max(u_m.abs()).max(lam_m.abs());
    let (case, q0) = if lam_l >= 0.0 {
        (RiemannCase::RarefactionLeft, q_l)
    } else if lam_m <= 0.0 {
        (RiemannCase::RarefactionMiddle, cell_from(rho_m, u_m, u_max, gamma))
    } else {
        let (rho0, u0) = fan_state(q_l.rho, u_l, u_max, gamma);
        (RiemannCase::RarefactionFan, cell_from(rho0, u0, u_max, gamma))
    };
    RiemannSolution { q0, case, u_l, u_r, rho_m, max_speed }
}

/// Smallest distance (in the compared quantities) from the pair to any case
/// boundary of the classifier. Gradient checks exclude pairs whose margin is
/// below the finite-difference probe scale, since the derivative is branch-
/// local there.
pub fn case_margin(q_l: CellState, q_r: CellState, u_max: f64, gamma: f64) -> f64 {
    let mut margin = (q_l.rho - EPS_RHO).abs().min((q_r.rho - EPS_RHO).abs());
    if q_l.rho <= EPS_RHO {
        return margin;
    }
    let u_l = velocity(q_l, u_max, gamma);
    let lam_l = lambda1(q_l.rho, u_l, u_max, gamma);
    if q_r.rho <= EPS_RHO {
        return margin.min(lam_l.abs());
    }
    let u_r = velocity(q_r, u_max, gamma);
    margin = margin.min((u_l - u_r).abs());
    if u_l > u_r {
        let (rho_m, u_m) = middle_state(q_l.rho, u_l, u_r, u_max, gamma);
        let shock_speed = (rho_m * u_m - q_l.rho * u_l) / (rho_m - q_l.rho);
        margin = margin.min(shock_speed.abs());
    } else if u_l < u_r {
        margin = margin.min((u_l - (u_r - u_max * pow_g(q_l.rho, gamma))).abs());
        margin = margin.min(lam_l.abs());
        if u_l > u_r - u_max * pow_g(q_l.rho, gamma) {
            let (rho_m, u_m) = middle_state(q_l.rho, u_l, u_r, u_max, gamma);
            margin = margin.min(lambda1(rho_m, u_m, u_max, gamma).abs());
        }
    }
    margin
}
