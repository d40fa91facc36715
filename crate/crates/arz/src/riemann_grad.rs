//! Derivatives of the interface state with respect to the two input states
//! and the speed limit. Each classifier case is an explicit formula, so its
//! Jacobian is an explicit formula too; gradients are branch-local, matching
//! how the forward solution was actually computed.

use difftraffic_core::state::{pow_g, u_eq, u_eq_prime};
use difftraffic_core::{CellState, Mat2, Vec2};

use crate::riemann::{RiemannBranch, RiemannSolution};

/// d q0 / d q_l, d q0 / d q_r, and d q0 / d u_max for one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannGradients {
    pub d_ql: Mat2,
    pub d_qr: Mat2,
    pub d_u_max: Vec2,
}

impl RiemannGradients {
    pub const ZERO: RiemannGradients =
        RiemannGradients { d_ql: Mat2::ZERO, d_qr: Mat2::ZERO, d_u_max: Vec2::ZERO };
}

/// (du/drho, du/dy) for u = y/rho + u_eq(rho).
fn velocity_partials(q: CellState, u_max: f64, gamma: f64) -> (f64, f64) {
    (-q.y / (q.rho * q.rho) + u_eq_prime(q.rho, u_max, gamma), 1.0 / q.rho)
}

pub fn riemann_gradients(
    q_l: CellState,
    q_r: CellState,
    u_max: f64,
    gamma: f64,
    sol: &RiemannSolution,
) -> RiemannGradients {
    match sol.case.branch() {
        RiemannBranch::Vacuum => RiemannGradients::ZERO,
        RiemannBranch::Left => RiemannGradients {
            d_ql: Mat2::IDENTITY,
            d_qr: Mat2::ZERO,
            d_u_max: Vec2::ZERO,
        },
        RiemannBranch::Middle => middle_gradients(q_l, q_r, u_max, gamma, sol),
        RiemannBranch::Fan => fan_gradients(q_l, u_max, gamma, sol),
    }
}

/// Middle state: rho_m = (rho_l^gamma + (u_l - u_r)/u_max)^(1/gamma),
/// u_m = u_r, y_m = rho_m (u_m - u_eq(rho_m)).
fn middle_gradients(
    q_l: CellState,
    q_r: CellState,
    u_max: f64,
    gamma: f64,
    sol: &RiemannSolution,
) -> RiemannGradients {
    let rho_m = sol.rho_m;
    let (dul_drho, dul_dy) = velocity_partials(q_l, u_max, gamma);
    let (dur_drho, dur_dy) = velocity_partials(q_r, u_max, gamma);

    // d rho_m / d (rho_m^gamma) = (1/gamma) rho_m^(1-gamma).
    let chain = pow_g(rho_m, 1.0 - gamma) / gamma;
    let p_l = pow_g(q_l.rho, gamma);
    let p_r = pow_g(q_r.rho, gamma);
    let p_m = pow_g(rho_m, gamma);

    let drm_drl = chain * (gamma * pow_g(q_l.rho, gamma - 1.0) + dul_drho / u_max);
    let drm_dyl = chain * (dul_dy / u_max);
    let drm_drr = -chain * dur_drho / u_max;
    let drm_dyr = -chain * dur_dy / u_max;
    let drm_dum = chain * ((p_r - p_l) / u_max - (sol.u_l - sol.u_r) / (u_max * u_max));

    let w = sol.u_r - u_eq(rho_m, u_max, gamma);
    let uep_m = u_eq_prime(rho_m, u_max, gamma);

    // y_m = rho_m w with w = u_m - u_eq(rho_m); u_m tracks the right velocity.
    let dym = |drm: f64, dum: f64| drm * w + rho_m * (dum - uep_m * drm);

    RiemannGradients {
        d_ql: Mat2::from_rows([drm_drl, drm_dyl], [dym(drm_drl, 0.0), dym(drm_dyl, 0.0)]),
        d_qr: Mat2::from_rows(
            [drm_drr, drm_dyr],
            [dym(drm_drr, dur_drho), dym(drm_dyr, dur_dy)],
        ),
        // d u_m / d u_max = d u_r / d u_max = 1 - rho_r^gamma, and u_eq picks
        // up its explicit u_max factor (1 - rho_m^gamma).
        d_u_max: Vec2(
            drm_dum,
            drm_dum * w + rho_m * ((1.0 - p_r) - (1.0 - p_m) - uep_m * drm_dum),
        ),
    }
}

/// Sonic fan state: with I = u_l + u_max rho_l^gamma,
/// rho0 = (I/((gamma+1) u_max))^(1/gamma), u0 = gamma/(gamma+1) I. Depends on
/// the left state only.
fn fan_gradients(q_l: CellState, u_max: f64, gamma: f64, sol: &RiemannSolution) -> RiemannGradients {
    let rho0 = sol.q0.rho;
    let (dul_drho, dul_dy) = velocity_partials(q_l, u_max, gamma);
    let invariant = sol.u_l + u_max * pow_g(q_l.rho, gamma);

    let chain = pow_g(rho0, 1.0 - gamma) / gamma;
    let scale = (gamma + 1.0) * u_max;

    let di_drl = dul_drho + u_max * gamma * pow_g(q_l.rho, gamma - 1.0);
    let di_dyl = dul_dy;

    let drho0 = |di: f64| chain * di / scale;
    let du0 = |di: f64| gamma / (gamma + 1.0) * di;

    let w = gamma / (gamma + 1.0) * invariant - u_eq(rho0, u_max, gamma);
    let uep0 = u_eq_prime(rho0, u_max, gamma);
    let dy0 = |drho: f64, du: f64| drho * w + rho0 * (du - uep0 * drho);

    // u_max enters through I (d I/d u_max = (1 - rho_l^gamma) + rho_l^gamma
    // = 1), through the fan scale, and through u_eq's explicit factor.
    let dg_dum = (u_max - invariant) / (scale * u_max);
    let drho0_dum = chain * dg_dum;
    let du0_dum = gamma / (gamma + 1.0);
    let p0 = pow_g(rho0, gamma);
    let dy0_dum = drho0_dum * w + rho0 * (du0_dum - (1.0 - p0) - uep0 * drho0_dum);

    RiemannGradients {
        d_ql: Mat2::from_rows(
            [drho0(di_drl), drho0(di_dyl)],
            [dy0(drho0(di_drl), du0(di_drl)), dy0(drho0(di_dyl), du0(di_dyl))],
        ),
        d_qr: Mat2::ZERO,
        d_u_max: Vec2(drho0_dum, dy0_dum),
    }
}
