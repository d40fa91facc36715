//! Pace-car control: gradient ascent on the followers' speed-tracking reward
//! over the controlled vehicle's per-frame acceleration schedule.

use std::collections::BTreeMap;

use difftraffic_adjoint::{run_scenario, StateSeed, StepTape};
use difftraffic_core::{Scenario, Vec2};

use crate::descent::{drive, DriveResult, Evaluation, Sense};
use crate::problem::{ControlKind, ControlProblem};
use crate::OptimizeError;

/// Tracking reward of one episode: summed over frames and vehicles, the
/// constant offset minus the squared deviation from that frame's target
/// speed.
pub fn pace_car_reward(frames: &[Vec<f64>], v_targ: &[f64], c_max: f64) -> f64 {
    frames
        .iter()
        .zip(v_targ)
        .map(|(speeds, vt)| speeds.iter().map(|v| c_max - (vt - v).powi(2)).sum::<f64>())
        .sum()
}

/// Follower speeds after each step, excluding the controlled vehicle.
pub fn follower_speed_frames(tape: &StepTape, lane: u64, pace_vehicle: u64) -> Vec<Vec<f64>> {
    tape.snapshots[1..]
        .iter()
        .map(|state| {
            state
                .micro_lanes
                .get(&lane)
                .expect("pace lane exists on the tape")
                .vehicles
                .iter()
                .filter(|v| v.id != pace_vehicle)
                .map(|v| v.v)
                .collect()
        })
        .collect()
}

/// One episode under the scenario's current schedule: the tracking reward and
/// its gradient with respect to the acceleration schedule. The episode is as
/// long as the target speed schedule.
pub fn pace_rollout(
    scenario: &Scenario,
    v_targ: &[f64],
    c_max: f64,
) -> Result<(f64, Vec<f64>), OptimizeError> {
    let steps = v_targ.len();
    if steps == 0 {
        return Err(OptimizeError::BadProblem("target speed schedule is empty".into()));
    }
    let (engine, tape) =
        run_scenario(scenario, steps).map_err(|e| OptimizeError::Rollout(e.to_string()))?;
    let (lane, pace_vehicle) = engine
        .pace_identity()
        .ok_or_else(|| OptimizeError::BadProblem("scenario has no pace car control".into()))?;

    let reward = pace_car_reward(&follower_speed_frames(&tape, lane, pace_vehicle), v_targ, c_max);

    let mut seeds: BTreeMap<usize, StateSeed> = BTreeMap::new();
    for t in 1..=steps {
        let lane_state =
            tape.snapshots[t].micro_lanes.get(&lane).expect("pace lane exists on the tape");
        let mut seed = StateSeed::default();
        for v in &lane_state.vehicles {
            if v.id != pace_vehicle {
                seed.vehicles.insert(v.id, Vec2(0.0, 2.0 * (v_targ[t - 1] - v.v)));
            }
        }
        if !seed.vehicles.is_empty() {
            seeds.insert(t, seed);
        }
    }
    let bundle = engine
        .backward_with(&tape, &seeds)
        .map_err(|e| OptimizeError::Rollout(e.to_string()))?;
    Ok((reward, bundle.pace))
}

/// Gradient ascent on the tracking reward over the pace car's acceleration
/// schedule, clamped to its bound. A rollout that fails (a collision, say)
/// rejects the iterate and halves the step; no penalty term is used.
pub fn optimize_pace_car(problem: &ControlProblem) -> Result<DriveResult, OptimizeError> {
    if problem.kind != ControlKind::PaceCar {
        return Err(OptimizeError::BadProblem("problem kind is not the pace car".into()));
    }
    let sc = &problem.scenario;
    let pace = sc
        .controls
        .as_ref()
        .and_then(|c| c.pace_car.as_ref())
        .ok_or_else(|| OptimizeError::BadProblem("scenario has no pace car control".into()))?;
    let v_targ = problem.constants.v_targ.clone();
    if v_targ.len() != pace.accel.len() {
        return Err(OptimizeError::BadProblem(format!(
            "target speed schedule has {} frames for {} control frames",
            v_targ.len(),
            pace.accel.len()
        )));
    }
    let bound = pace.bound;
    let c_max = problem.constants.c_max;
    if !(bound.is_finite() && bound > 0.0) {
        return Err(OptimizeError::BadProblem("acceleration bound must be positive".into()));
    }
    if !c_max.is_finite() || v_targ.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::BadProblem("reward constants must be finite".into()));
    }

    drive(
        pace.accel.clone(),
        Sense::Maximize,
        &problem.settings,
        |x| {
            for a in x.iter_mut() {
                *a = a.clamp(-bound, bound);
            }
        },
        |x| {
            let mut cand = sc.clone();
            cand.controls
                .as_mut()
                .expect("controls checked above")
                .pace_car
                .as_mut()
                .expect("pace car checked above")
                .accel = x.to_vec();
            let (value, gradient) = pace_rollout(&cand, &v_targ, c_max)?;
            Ok(Evaluation { value, gradient })
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_at_target_speed_is_the_constant_ceiling() {
        let frames = vec![vec![12.0; 4]; 25];
        let reward = pace_car_reward(&frames, &[12.0; 25], 100.0);
        assert_eq!(reward, 25.0 * 4.0 * 100.0);
    }

    #[test]
    fn reward_subtracts_squared_deviations() {
        let frames = vec![vec![8.0]];
        assert_eq!(pace_car_reward(&frames, &[10.0], 10.0), 6.0);
    }

    #[test]
    fn reward_follows_a_varying_schedule() {
        let frames = vec![vec![10.0, 9.0], vec![11.0, 12.0]];
        let v_targ = [10.0, 12.0];
        let by_hand = (10.0 - (10.0 - 10.0_f64).powi(2))
            + (10.0 - (10.0 - 9.0_f64).powi(2))
            + (10.0 - (12.0 - 11.0_f64).powi(2))
            + (10.0 - (12.0 - 12.0_f64).powi(2));
        assert_eq!(pace_car_reward(&frames, &v_targ, 10.0), by_hand);
    }

    #[test]
    fn empty_schedules_are_rejected() {
        let sc = difftraffic_core::builders::pace_scenario(2, 10.0, 5);
        assert!(matches!(pace_rollout(&sc, &[], 100.0), Err(OptimizeError::BadProblem(_))));
    }

    #[test]
    fn kind_and_schedule_length_are_checked() {
        let sc = difftraffic_core::builders::pace_scenario(2, 10.0, 5);
        let problem = ControlProblem {
            kind: ControlKind::SignalTiming,
            scenario: sc.clone(),
            constants: crate::RewardConstants { v_targ: vec![10.0; 5], ..Default::default() },
            settings: Default::default(),
        };
        assert!(matches!(optimize_pace_car(&problem), Err(OptimizeError::BadProblem(_))));

        let problem = ControlProblem {
            kind: ControlKind::PaceCar,
            scenario: sc,
            constants: crate::RewardConstants { v_targ: vec![10.0; 4], ..Default::default() },
            settings: Default::default(),
        };
        assert!(matches!(optimize_pace_car(&problem), Err(OptimizeError::BadProblem(_))));
    }
}
