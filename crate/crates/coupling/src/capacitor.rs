//! Macro → micro conversion: the flux capacitor.
//!
//! The mass flux rho·u through the downstream boundary of the feeding macro
//! lane, divided by the mean vehicle length, is a vehicle rate. Integrating it
//! with the step size gives a fractional vehicle count; every time the
//! accumulator crosses an integer one vehicle is credited for release. In
//! stochastic mode the per-step credit count is drawn from a Poisson
//! distribution with the increment as its mean instead, while the
//! deterministic accumulator keeps advancing so that credit intervals stay
//! well defined.
//!
//! Credited vehicles wait in a pending queue until the micro entrance has
//! room: a vehicle is placed at position zero only when the gap to the lane's
//! rearmost vehicle is at least its own minimum spacing.

use difftraffic_core::linalg::Vec2;
use difftraffic_core::state::{u_eq, u_eq_prime, pow_g, CellState, VehicleState};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Persistent per-link accumulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorState {
    /// Deterministic fractional vehicle count, monotone non-decreasing.
    pub acc: f64,
    /// Credited vehicles not yet placed on the micro lane.
    pub pending: u64,
    /// Step at which the most recent credit was issued.
    pub last_credit_step: Option<usize>,
}

impl CapacitorState {
    pub fn new() -> CapacitorState {
        CapacitorState { acc: 0.0, pending: 0, last_credit_step: None }
    }
}

impl Default for CapacitorState {
    fn default() -> CapacitorState {
        CapacitorState::new()
    }
}

/// One vehicle credited for release, with the step range that charged it.
///
/// The interval is inclusive on both ends; a credit issued in the same step
/// as the previous one degenerates to the single crossing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionCredit {
    pub step_lo: usize,
    pub step_hi: usize,
}

/// Fractional vehicle count added by one step of boundary flux.
///
/// `q_edge` is the post-step state of the feeding lane's downstream cell.
pub fn capacitor_increment(
    q_edge: CellState,
    u_max: f64,
    gamma: f64,
    dt: f64,
    len_mean: f64,
) -> f64 {
    if q_edge.is_vacuum() {
        return 0.0;
    }
    let u = q_edge.y / q_edge.rho + u_eq(q_edge.rho, u_max, gamma);
    (q_edge.rho * u).max(0.0) * dt / len_mean
}

/// Advance the accumulator by one step's increment and issue credits.
///
/// Deterministic mode (`stochastic_count == None`) credits one vehicle per
/// integer crossing of the accumulator. Stochastic mode credits the supplied
/// Poisson draw instead; the accumulator still advances so the credit
/// intervals remain anchored to the deterministic charge history.
pub fn capacitor_advance(
    state: &CapacitorState,
    increment: f64,
    step: usize,
    stochastic_count: Option<u64>,
) -> (CapacitorState, Vec<EmissionCredit>) {
    debug_assert!(increment >= 0.0, "capacitor increment must be non-negative");
    let acc = state.acc + increment;
    let crossings = (acc.floor() - state.acc.floor()).max(0.0) as u64;
    let credited = stochastic_count.unwrap_or(crossings);

    let mut credits = Vec::with_capacity(credited as usize);
    let mut last = state.last_credit_step;
    for _ in 0..credited {
        let lo = match last {
            None => 0,
            Some(s) => (s + 1).min(step),
        };
        credits.push(EmissionCredit { step_lo: lo, step_hi: step });
        last = Some(step);
    }

    let next = CapacitorState {
        acc,
        pending: state.pending + credited,
        last_credit_step: last,
    };
    (next, credits)
}

/// Draw a Poisson-distributed credit count with the given mean.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite Poisson mean").sample(rng) as u64
}

/// Whether a vehicle with minimum spacing `s_min` fits at position zero.
///
/// `tail` is the rearmost vehicle of the receiving micro lane, if any.
pub fn can_place(tail: Option<&VehicleState>, s_min: f64) -> bool {
    match tail {
        None => true,
        Some(t) => t.p - t.params.length >= s_min,
    }
}

/// Speed assigned to a vehicle released from the given edge state.
///
/// A vacuum edge releases at free-flow speed (the vacuum limit of u).
pub fn emission_velocity(q_edge: CellState, u_max: f64, gamma: f64) -> f64 {
    if q_edge.is_vacuum() {
        u_max
    } else {
        q_edge.y / q_edge.rho + u_eq(q_edge.rho, u_max, gamma)
    }
}

/// Partials of the release speed: d(rho, y) as a vector, plus d u_max.
pub fn emission_velocity_partials(q_edge: CellState, u_max: f64, gamma: f64) -> (Vec2, f64) {
    if q_edge.is_vacuum() {
        return (Vec2::ZERO, 1.0);
    }
    let rho = q_edge.rho;
    let d_rho = -q_edge.y / (rho * rho) + u_eq_prime(rho, u_max, gamma);
    let d_y = 1.0 / rho;
    let d_u_max = 1.0 - pow_g(rho, gamma);
    (Vec2(d_rho, d_y), d_u_max)
}

/// Reverse-mode surrogate for an emitted vehicle's existence weight.
///
/// The vehicle credited over an interval was charged by the per-step
/// increments rho·u·dt/len. Spreading the downstream weight gradient
/// `grad_w` over those increments gives, per contributing step, an adjoint
/// on the edge cell state and on u_max:
///
///   d inc / d rho = (u_eq + rho·u_eq') · dt/len
///   d inc / d y   = dt/len
///   d inc / d u_max = rho·(1 − rho^gamma) · dt/len
///
/// `edge_states` pairs each step in the credit interval with the edge state
/// the increment was computed from. Vacuum steps contributed nothing and
/// yield zero adjoints.
pub fn backward_through_emission(
    grad_w: f64,
    edge_states: &[(usize, CellState)],
    u_max: f64,
    gamma: f64,
    dt: f64,
    len_mean: f64,
) -> Vec<(usize, Vec2, f64)> {
    let scale = grad_w * dt / len_mean;
    edge_states
        .iter()
        .map(|&(step, q)| {
            if q.is_vacuum() {
                return (step, Vec2::ZERO, 0.0);
            }
            let d_rho = u_eq(q.rho, u_max, gamma) + q.rho * u_eq_prime(q.rho, u_max, gamma);
            let d_y = 1.0;
            let d_u_max = q.rho * (1.0 - pow_g(q.rho, gamma));
            (step, Vec2(d_rho * scale, d_y * scale), d_u_max * scale)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use difftraffic_core::state::IdmParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const U_MAX: f64 = 16.0;
    const GAMMA: f64 = 0.5;

    #[test]
    fn increment_is_mass_flux_over_length() {
        // rho = 0.25, u = y/rho + u_eq = 0.4 + 16*(1 - 0.5) = 8.4
        let q = CellState::new(0.25, 0.1);
        let inc = capacitor_increment(q, U_MAX, GAMMA, 0.5, 5.0);
        assert!((inc - 0.25 * 8.4 * 0.5 / 5.0).abs() < 1e-15);
        assert_eq!(capacitor_increment(CellState::new(0.0, 0.0), U_MAX, GAMMA, 0.5, 5.0), 0.0);
    }

    #[test]
    fn deterministic_crossings_credit_one_vehicle_each() {
        let mut state = CapacitorState::new();
        let mut credits = Vec::new();
        // 0.3 per step: crossings at steps 3 (0.9 -> 1.2) and 6 (1.8 -> 2.1).
        for step in 0..8 {
            let (next, new) = capacitor_advance(&state, 0.3, step, None);
            credits.extend(new);
            state = next;
        }
        assert!((state.acc - 2.4).abs() < 1e-12);
        assert_eq!(state.pending, 2);
        assert_eq!(
            credits,
            vec![
                EmissionCredit { step_lo: 0, step_hi: 3 },
                EmissionCredit { step_lo: 4, step_hi: 6 },
            ]
        );
    }

    #[test]
    fn multiple_crossings_in_one_step_degenerate_to_crossing_step() {
        let state = CapacitorState::new();
        let (next, credits) = capacitor_advance(&state, 2.5, 4, None);
        assert_eq!(next.pending, 2);
        assert_eq!(
            credits,
            vec![
                EmissionCredit { step_lo: 0, step_hi: 4 },
                EmissionCredit { step_lo: 4, step_hi: 4 },
            ]
        );
    }

    #[test]
    fn stochastic_mode_advances_accumulator_and_uses_drawn_count() {
        let state = CapacitorState::new();
        let (next, credits) = capacitor_advance(&state, 0.3, 0, Some(2));
        assert_eq!(next.pending, 2);
        assert!((next.acc - 0.3).abs() < 1e-15);
        assert_eq!(credits.len(), 2);
        // Zero draw also advances the accumulator.
        let (next2, credits2) = capacitor_advance(&next, 0.8, 1, Some(0));
        assert!((next2.acc - 1.1).abs() < 1e-15);
        assert_eq!(next2.pending, 2);
        assert!(credits2.is_empty());
    }

    #[test]
    fn poisson_sample_mean_tracks_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &mean in &[0.01, 0.05, 0.2] {
            let n = 100_000u64;
            let total: u64 = (0..n).map(|_| sample_poisson(&mut rng, mean)).sum();
            let sample_mean = total as f64 / n as f64;
            let sigma = (mean / n as f64).sqrt();
            assert!(
                (sample_mean - mean).abs() < 3.0 * sigma,
                "mean {mean}: sample {sample_mean} outside 3 sigma {sigma}"
            );
        }
        assert_eq!(sample_poisson(&mut rng, 0.0), 0);
    }

    #[test]
    fn placement_requires_minimum_gap_behind_tail() {
        let params = IdmParams {
            s_min: 2.0,
            t_pref: 1.0,
            a_max: 1.0,
            a_pref: 1.0,
            v_targ: 10.0,
            length: 5.0,
        };
        let tail = VehicleState { id: 3, p: 7.5, v: 4.0, params: params.clone() };
        assert!(can_place(None, 2.0));
        assert!(can_place(Some(&tail), 2.0)); // gap 2.5
        assert!(!can_place(Some(&tail), 3.0));
        let close = VehicleState { p: 6.0, ..tail };
        assert!(!can_place(Some(&close), 2.0)); // gap 1.0
    }

    #[test]
    fn emission_velocity_matches_flow_speed_and_partials_match_fd() {
        let q = CellState::new(0.36, -0.2);
        let v = emission_velocity(q, U_MAX, GAMMA);
        assert!((v - (q.y / q.rho + u_eq(q.rho, U_MAX, GAMMA))).abs() < 1e-15);
        assert_eq!(emission_velocity(CellState::new(0.0, 0.0), U_MAX, GAMMA), U_MAX);

        let (d_q, d_um) = emission_velocity_partials(q, U_MAX, GAMMA);
        let h = 1e-6;
        let fd_rho = (emission_velocity(CellState::new(q.rho + h, q.y), U_MAX, GAMMA)
            - emission_velocity(CellState::new(q.rho - h, q.y), U_MAX, GAMMA))
            / (2.0 * h);
        let fd_y = (emission_velocity(CellState::new(q.rho, q.y + h), U_MAX, GAMMA)
            - emission_velocity(CellState::new(q.rho, q.y - h), U_MAX, GAMMA))
            / (2.0 * h);
        let fd_um = (emission_velocity(q, U_MAX + h, GAMMA)
            - emission_velocity(q, U_MAX - h, GAMMA))
            / (2.0 * h);
        assert!((d_q.0 - fd_rho).abs() < 1e-6);
        assert!((d_q.1 - fd_y).abs() < 1e-9);
        assert!((d_um - fd_um).abs() < 1e-9);
    }

    #[test]
    fn emission_surrogate_is_exact_gradient_of_accumulated_charge() {
        // The surrogate adjoints are, by construction, the derivative of the
        // summed interval increments. Check against central differences on
        // that sum for a non-uniform charge history.
        let dt = 0.4;
        let len = 5.0;
        let states = vec![
            (2usize, CellState::new(0.2, 0.05)),
            (3, CellState::new(0.35, -0.1)),
            (4, CellState::new(0.5, 0.0)),
        ];
        let total = |perturb: &dyn Fn(usize, CellState) -> CellState, um: f64| -> f64 {
            states
                .iter()
                .map(|&(s, q)| capacitor_increment(perturb(s, q), um, GAMMA, dt, len))
                .sum()
        };
        let grads = backward_through_emission(1.0, &states, U_MAX, GAMMA, dt, len);
        let h = 1e-6;
        for (k, &(step, q)) in states.iter().enumerate() {
            let fd_rho = (total(
                &|s, x| if s == step { CellState::new(x.rho + h, x.y) } else { x },
                U_MAX,
            ) - total(
                &|s, x| if s == step { CellState::new(x.rho - h, x.y) } else { x },
                U_MAX,
            )) / (2.0 * h);
            let fd_y = (total(
                &|s, x| if s == step { CellState::new(x.rho, x.y + h) } else { x },
                U_MAX,
            ) - total(
                &|s, x| if s == step { CellState::new(x.rho, x.y - h) } else { x },
                U_MAX,
            )) / (2.0 * h);
            let (gs, gq, _) = grads[k];
            assert_eq!(gs, step);
            assert!((gq.0 - fd_rho).abs() < 1e-7, "rho adjoint at step {step}");
            assert!((gq.1 - fd_y).abs() < 1e-9, "y adjoint at step {step}");
            let _ = q;
        }
        let fd_um = (total(&|_, x| x, U_MAX + h) - total(&|_, x| x, U_MAX - h)) / (2.0 * h);
        let sum_um: f64 = grads.iter().map(|g| g.2).sum();
        assert!((sum_um - fd_um).abs() < 1e-8);
    }

    #[test]
    fn surrogate_scales_linearly_with_weight_gradient() {
        let states = vec![(0usize, CellState::new(0.3, 0.1))];
        let g1 = backward_through_emission(1.0, &states, U_MAX, GAMMA, 0.5, 5.0);
        let g10 = backward_through_emission(10.0, &states, U_MAX, GAMMA, 0.5, 5.0);
        assert!((g10[0].1 .0 - 10.0 * g1[0].1 .0).abs() < 1e-12);
        assert!((g10[0].1 .1 - 10.0 * g1[0].1 .1).abs() < 1e-12);
        assert!((g10[0].2 - 10.0 * g1[0].2).abs() < 1e-12);
    }
}
