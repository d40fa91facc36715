//! Flux function and characteristic structure of the conserved system
//! q = (rho, y) with f(q) = q * u(q).

use difftraffic_core::state::{pow_g, u_eq, u_eq_prime};
use difftraffic_core::{CellState, Mat2, Vec2, EPS_RHO};

pub use difftraffic_core::validate::max_wave_speed;

/// f(q) = (rho u, y u). Vacuum cells carry no flux.
pub fn flux(q: CellState, u_max: f64, gamma: f64) -> Vec2 {
    if q.rho <= EPS_RHO {
        return Vec2::ZERO;
    }
    let u = q.y / q.rho + u_eq(q.rho, u_max, gamma);
    Vec2(q.rho * u, q.y * u)
}

/// df/dq. Writing f = (y + rho u_eq, y^2/rho + y u_eq) and differentiating:
/// row 1 is (u_eq + rho u_eq', 1), row 2 is (y u_eq' - y^2/rho^2, 2y/rho + u_eq).
pub fn flux_jacobian(q: CellState, u_max: f64, gamma: f64) -> Mat2 {
    if q.rho <= EPS_RHO {
        return Mat2::ZERO;
    }
    let ue = u_eq(q.rho, u_max, gamma);
    let uep = u_eq_prime(q.rho, u_max, gamma);
    Mat2::from_rows(
        [ue + q.rho * uep, 1.0],
        [q.y * uep - (q.y / q.rho) * (q.y / q.rho), 2.0 * q.y / q.rho + ue],
    )
}

/// Explicit df/du_max at fixed q: u depends on u_max only through
/// u_eq = u_max (1 - rho^gamma), so df/du_max = q * (1 - rho^gamma).
pub fn flux_u_max_partial(q: CellState, gamma: f64) -> Vec2 {
    if q.rho <= EPS_RHO {
        return Vec2::ZERO;
    }
    let s = 1.0 - pow_g(q.rho, gamma);
    Vec2(q.rho * s, q.y * s)
}

/// Characteristic speeds (lambda_1, lambda_2) = (u - u_max gamma rho^gamma, u).
pub fn eigenvalues(q: CellState, u_max: f64, gamma: f64) -> (f64, f64) {
    if q.rho <= EPS_RHO {
        return (u_max, u_max);
    }
    let u = q.y / q.rho + u_eq(q.rho, u_max, gamma);
    (u - u_max * gamma * pow_g(q.rho, gamma), u)
}
