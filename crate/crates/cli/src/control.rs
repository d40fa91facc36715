//! Control optimization command: tune a pace car's acceleration schedule or
//! a signal's green split by gradient ascent on the episode reward.

use std::path::Path;

use anyhow::{Context, Result};
use difftraffic_core::Scenario;
use difftraffic_optimize::{
    optimize_pace_car, optimize_signal_timing, pace_rollout, signal_reward, signal_rollout,
    write_history_csv, ControlKind, ControlProblem, IterationRecord,
};
use serde::{Deserialize, Serialize};

use crate::estimate::map_optimize_error;
use crate::io::{input_error, load_scenario, load_spec, write_json, write_text};
use crate::spec_files::{ControlKindSpec, ControlSpec};

pub const CONTROL_SCHEMA: &str = "difftraffic.control-report/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlReport {
    pub schema: String,
    pub kind: String,
    /// Reward of the optimized controls; for signals this is the hard-count
    /// reward, not the smoothed surrogate the search climbed.
    pub reward: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_schedule_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greens: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub even_split_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub even_split_smooth_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_smooth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_hard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_crossings: Option<u64>,
}

pub fn cmd_control(
    scenario_path: &Path,
    problem_path: &Path,
    out_dir: &Path,
) -> Result<ControlReport> {
    let scenario = load_scenario(scenario_path)?;
    let spec: ControlSpec = load_spec(problem_path)?;
    let constants = spec.constants.resolve();
    let settings = spec.settings.resolve();

    let (report, solution, history) = match spec.kind {
        ControlKindSpec::PaceCar => {
            let problem = ControlProblem {
                kind: ControlKind::PaceCar,
                scenario: scenario.clone(),
                constants: constants.clone(),
                settings,
            };
            let result =
                optimize_pace_car(&problem).map_err(|e| map_optimize_error("pace control", e))?;

            let mut zero = scenario.clone();
            let pace = zero
                .controls
                .as_mut()
                .and_then(|c| c.pace_car.as_mut())
                .ok_or_else(|| input_error("scenario has no pace car control".to_string()))?;
            let schedule_len = pace.accel.len();
            pace.accel = vec![0.0; schedule_len];
            let (zero_reward, _) = pace_rollout(&zero, &constants.v_targ, constants.c_max)
                .map_err(|e| map_optimize_error("zero-schedule baseline", e))?;

            let mut solution = scenario.clone();
            solution
                .controls
                .as_mut()
                .and_then(|c| c.pace_car.as_mut())
                .expect("pace control checked above")
                .accel = result.best.clone();

            let report = ControlReport {
                schema: CONTROL_SCHEMA.into(),
                kind: "pace_car".into(),
                reward: result.best_value,
                iterations: result.history.last().map_or(0, |r| r.iteration),
                zero_schedule_reward: Some(zero_reward),
                improvement: Some(result.best_value - zero_reward),
                schedule_len: Some(schedule_len),
                greens: None,
                smooth_reward: None,
                even_split_reward: None,
                even_split_smooth_reward: None,
                flow: None,
                queue_smooth: None,
                queue_hard: None,
                micro_crossings: None,
            };
            (report, solution, result.history)
        }
        ControlKindSpec::SignalTiming => {
            let problem = ControlProblem {
                kind: ControlKind::SignalTiming,
                scenario: scenario.clone(),
                constants: constants.clone(),
                settings,
            };
            let result = optimize_signal_timing(&problem)
                .map_err(|e| map_optimize_error("signal control", e))?;

            let mut even = scenario.clone();
            let signal = even
                .controls
                .as_mut()
                .and_then(|c| c.signal.as_mut())
                .ok_or_else(|| input_error("scenario has no signal control".to_string()))?;
            let half = signal.phase_length / 2.0;
            signal.green_we = vec![half; signal.green_we.len()];
            let (even_m, even_smooth, _) =
                signal_rollout(&even, constants.c1, constants.c2, constants.queue_threshold)
                    .map_err(|e| map_optimize_error("even-split baseline", e))?;
            let even_hard = signal_reward(even_m.flow, even_m.queue_hard, constants.c1, constants.c2);

            let mut solution = scenario.clone();
            solution
                .controls
                .as_mut()
                .and_then(|c| c.signal.as_mut())
                .expect("signal control checked above")
                .green_we = result.greens.clone();

            let report = ControlReport {
                schema: CONTROL_SCHEMA.into(),
                kind: "signal_timing".into(),
                reward: result.reward,
                iterations: result.history.last().map_or(0, |r| r.iteration),
                zero_schedule_reward: None,
                improvement: None,
                schedule_len: None,
                greens: Some(result.greens.clone()),
                smooth_reward: Some(result.smooth_reward),
                even_split_reward: Some(even_hard),
                even_split_smooth_reward: Some(even_smooth),
                flow: Some(result.measurement.flow),
                queue_smooth: Some(result.measurement.queue_smooth),
                queue_hard: Some(result.measurement.queue_hard),
                micro_crossings: Some(result.measurement.micro_crossings),
            };
            (report, solution, result.history)
        }
    };

    write_outputs(out_dir, &report, &solution, &history)?;
    println!(
        "control ({}): reward {:.4} after {} iterations, outputs in {}",
        report.kind,
        report.reward,
        report.iterations,
        out_dir.display()
    );
    Ok(report)
}

fn write_outputs(
    out_dir: &Path,
    report: &ControlReport,
    solution: &Scenario,
    history: &[IterationRecord],
) -> Result<()> {
    write_history_csv(&out_dir.join("history.csv"), history)
        .with_context(|| format!("writing {}", out_dir.join("history.csv").display()))?;
    write_text(&out_dir.join("solution.json"), &(solution.to_json_pretty() + "\n"))?;
    write_json(&out_dir.join("control_report.json"), report)?;
    Ok(())
}
