//! Signal-timing control: gradient ascent on junction flow minus queue size
//! over the per-phase green-time allocations. The flow term integrates the
//! weighted boundary flux of every gated lane; the queue term counts slow
//! cells through a sigmoid for gradient purposes while the hard count is
//! reported alongside.

use std::collections::BTreeMap;

use difftraffic_adjoint::{run_scenario, signal_weight_partials, StateSeed};
use difftraffic_core::state::{u_eq, u_eq_prime};
use difftraffic_core::{velocity_from_state, Scenario, SignalSpec, Vec2};
use difftraffic_coupling::emission_velocity_partials;

use crate::descent::{drive, Evaluation, IterationRecord, Sense};
use crate::problem::{integer_steps, ControlKind, ControlProblem};
use crate::OptimizeError;

/// Episode aggregates of one signal rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalMeasurement {
    /// Vehicles that crossed the junction over the episode, integrated from
    /// the gated boundary fluxes.
    pub flow: f64,
    /// Frame-averaged smoothed queue size over the gated lanes.
    pub queue_smooth: f64,
    /// Frame-averaged hard queue size: cells strictly slower than the
    /// threshold.
    pub queue_hard: f64,
    /// Discrete vehicles that left micro lanes during the episode.
    pub micro_crossings: u64,
}

/// Weighted episode reward combining a flow term and a queue term.
pub fn signal_reward(r_f: f64, r_q: f64, c1: f64, c2: f64) -> f64 {
    c1 * r_f + c2 * r_q
}

/// Output of [`optimize_signal_timing`].
#[derive(Debug, Clone)]
pub struct SignalResult {
    /// Best green times for the west-east approach, one per phase.
    pub greens: Vec<f64>,
    /// Reward of the best allocation with the hard queue count.
    pub reward: f64,
    /// Smoothed reward the search maximized.
    pub smooth_reward: f64,
    pub measurement: SignalMeasurement,
    pub history: Vec<IterationRecord>,
}

/// Run the scenario's full signal episode and report its aggregates. The
/// episode covers every scheduled phase plus one wind-down phase at the
/// default even split, so the queue left by the last scheduled phase is
/// discharged inside the measured window rather than hidden past its end.
/// `threshold` overrides the queue speed threshold, which otherwise defaults
/// to a tenth of each lane's speed limit.
pub fn measure_signal_episode(
    scenario: &Scenario,
    threshold: Option<f64>,
) -> Result<SignalMeasurement, OptimizeError> {
    episode_with_gradient(scenario, 1.0, -1.0, threshold).map(|e| e.measurement)
}

/// One full episode under the scenario's current green times: the
/// measurement, the smoothed reward, and its gradient with respect to the
/// per-phase green times.
pub fn signal_rollout(
    scenario: &Scenario,
    c1: f64,
    c2: f64,
    threshold: Option<f64>,
) -> Result<(SignalMeasurement, f64, Vec<f64>), OptimizeError> {
    episode_with_gradient(scenario, c1, c2, threshold)
        .map(|e| (e.measurement, e.smooth_reward, e.green_grad))
}

/// Gradient ascent on the smoothed episode reward over the per-phase green
/// times, clamped to [min_green, phase_length - min_green]; the other
/// approach always gets each phase's remainder. The reported reward of the
/// best allocation uses the hard queue count.
pub fn optimize_signal_timing(problem: &ControlProblem) -> Result<SignalResult, OptimizeError> {
    if problem.kind != ControlKind::SignalTiming {
        return Err(OptimizeError::BadProblem("problem kind is not signal timing".into()));
    }
    let sc = &problem.scenario;
    let spec = signal_spec(sc)?;
    let lo = spec.min_green;
    let hi = spec.phase_length - spec.min_green;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(OptimizeError::BadProblem(format!(
            "green bounds [{lo}, {hi}] are not a finite interval"
        )));
    }
    let c1 = problem.constants.c1;
    let c2 = problem.constants.c2;
    let threshold = problem.constants.queue_threshold;
    if !(c1.is_finite() && c2.is_finite() && threshold.map_or(true, |t| t.is_finite() && t > 0.0)) {
        return Err(OptimizeError::BadProblem("reward constants must be finite".into()));
    }

    let out = drive(
        spec.green_we.clone(),
        Sense::Maximize,
        &problem.settings,
        |x| {
            for g in x.iter_mut() {
                *g = g.clamp(lo, hi);
            }
        },
        |x| {
            let episode = episode_with_gradient(&with_greens(sc, x), c1, c2, threshold)?;
            Ok(Evaluation { value: episode.smooth_reward, gradient: episode.green_grad })
        },
    )?;

    let measurement = measure_signal_episode(&with_greens(sc, &out.best), threshold)?;
    Ok(SignalResult {
        reward: signal_reward(measurement.flow, measurement.queue_hard, c1, c2),
        smooth_reward: out.best_value,
        greens: out.best,
        measurement,
        history: out.history,
    })
}

struct Episode {
    measurement: SignalMeasurement,
    smooth_reward: f64,
    green_grad: Vec<f64>,
}

/// One full episode with its smoothed reward and green-time gradient. The
/// gradient combines the reverse sweep through the dynamics with the direct
/// dependence of the gating windows on the green times.
fn episode_with_gradient(
    scenario: &Scenario,
    c1: f64,
    c2: f64,
    threshold: Option<f64>,
) -> Result<Episode, OptimizeError> {
    let spec = signal_spec(scenario)?;
    let steps =
        integer_steps((spec.green_we.len() + 1) as f64 * spec.phase_length, scenario.config.dt)?;
    let (engine, tape) =
        run_scenario(scenario, steps).map_err(|e| OptimizeError::Rollout(e.to_string()))?;

    let gated: Vec<(u64, bool)> = spec
        .we_lanes
        .iter()
        .map(|&lane| (lane, true))
        .chain(spec.ns_lanes.iter().map(|&lane| (lane, false)))
        .collect();
    let dt = scenario.config.dt;
    let gamma = scenario.config.gamma;
    let veh_len = scenario.config.mean_vehicle_length;

    let mut flow = 0.0;
    let mut green_grad = vec![0.0; spec.green_we.len()];
    let mut seeds: BTreeMap<usize, StateSeed> = BTreeMap::new();

    for s in 0..steps {
        let state = &tape.snapshots[s + 1];
        let partials = signal_weight_partials(&spec, s as f64 * dt, dt);
        for &(lane, is_we) in &gated {
            let ml = state.macro_lanes.get(&lane).expect("gated lane exists on the tape");
            let edge = *ml.cells.last().expect("macro lane has cells");
            let f = edge.y + edge.rho * u_eq(edge.rho, ml.u_max, gamma);
            if f <= 0.0 {
                continue;
            }
            let w = engine.lane_weight(lane, s);
            flow += w * f * dt / veh_len;
            let d_flux = Vec2(
                u_eq(edge.rho, ml.u_max, gamma) + edge.rho * u_eq_prime(edge.rho, ml.u_max, gamma),
                1.0,
            );
            add_cell_seed(
                seeds.entry(s + 1).or_default(),
                lane,
                ml.cells.len(),
                ml.cells.len() - 1,
                d_flux.scale(c1 * w * dt / veh_len),
            );
            for &(k, d_we, d_ns) in &partials {
                green_grad[k] += c1 * f * dt / veh_len * if is_we { d_we } else { d_ns };
            }
        }
    }

    let mut queue_smooth_sum = 0.0;
    let mut queue_hard_sum = 0usize;
    for t in 1..=steps {
        let state = &tape.snapshots[t];
        for &(lane, _) in &gated {
            let ml = state.macro_lanes.get(&lane).expect("gated lane exists on the tape");
            let u_th = threshold.unwrap_or(ml.u_max / 10.0);
            let width = u_th / 2.0;
            for (i, cell) in ml.cells.iter().enumerate() {
                let u = velocity_from_state(*cell, ml.u_max, gamma).u;
                let sig = sigmoid((u_th - u) / width);
                queue_smooth_sum += sig;
                if u < u_th {
                    queue_hard_sum += 1;
                }
                let scale = -c2 * sig * (1.0 - sig) / (steps as f64 * width);
                let (du_dq, _) = emission_velocity_partials(*cell, ml.u_max, gamma);
                let d = du_dq.scale(scale);
                if d.0 != 0.0 || d.1 != 0.0 {
                    add_cell_seed(seeds.entry(t).or_default(), lane, ml.cells.len(), i, d);
                }
            }
        }
    }
    let queue_smooth = queue_smooth_sum / steps as f64;
    let queue_hard = queue_hard_sum as f64 / steps as f64;

    let bundle = engine
        .backward_with(&tape, &seeds)
        .map_err(|e| OptimizeError::Rollout(e.to_string()))?;
    for (g, b) in green_grad.iter_mut().zip(&bundle.green) {
        *g += b;
    }

    let micro_crossings = tape
        .records
        .iter()
        .flat_map(|r| r.micro_records.values())
        .map(|m| m.exited.len() as u64)
        .sum();

    Ok(Episode {
        measurement: SignalMeasurement { flow, queue_smooth, queue_hard, micro_crossings },
        smooth_reward: signal_reward(flow, queue_smooth, c1, c2),
        green_grad,
    })
}

fn signal_spec(sc: &Scenario) -> Result<SignalSpec, OptimizeError> {
    sc.controls
        .as_ref()
        .and_then(|c| c.signal.as_ref())
        .cloned()
        .ok_or_else(|| OptimizeError::BadProblem("scenario has no signal control".into()))
}

fn with_greens(sc: &Scenario, greens: &[f64]) -> Scenario {
    let mut out = sc.clone();
    out.controls
        .as_mut()
        .expect("signal checked above")
        .signal
        .as_mut()
        .expect("signal checked above")
        .green_we = greens.to_vec();
    out
}

fn add_cell_seed(seed: &mut StateSeed, lane: u64, cells: usize, index: usize, d: Vec2) {
    let lane_seed = seed.macro_cells.entry(lane).or_insert_with(|| vec![Vec2::ZERO; cells]);
    lane_seed[index] += d;
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
