//! Initial-state estimation command: fit a scenario's starting macro cells
//! so a forward run reproduces observed final cells.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use difftraffic_adjoint::run_scenario;
use difftraffic_core::{builders, CellState, LaneSpec, Scenario};
use difftraffic_optimize::{
    estimate_initial_state, macro_cells, write_history_csv, EstimationProblem, OptimizeError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{input_error, load_scenario, load_spec, note, run_error, write_json, write_text};
use crate::spec_files::EstimateSpec;

pub const ESTIMATE_SCHEMA: &str = "difftraffic.estimate-report/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema: String,
    pub horizon_seconds: f64,
    pub steps: usize,
    /// Index of the last accepted iterate.
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// initial over final loss; absent when the final loss reached zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction_factor: Option<f64>,
}

/// Bad-problem failures are the caller's input; rollout failures happened
/// inside the simulation.
pub(crate) fn map_optimize_error(context: &str, e: OptimizeError) -> anyhow::Error {
    match e {
        OptimizeError::BadProblem(_) | OptimizeError::ShapeMismatch(_) => {
            input_error(format!("{context}: {e}"))
        }
        other => run_error(format!("{context}: {other}")),
    }
}

pub fn cmd_estimate(
    scenario_path: &Path,
    problem_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<EstimateReport> {
    let scenario = load_scenario(scenario_path)?;
    let spec: EstimateSpec = load_spec(problem_path)?;

    let dt = scenario.config.dt;
    let ratio = spec.horizon_seconds / dt;
    let steps = ratio.round() as usize;
    if steps == 0 || (ratio - steps as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(input_error(format!(
            "horizon_seconds {} is not a positive whole number of {dt} s steps",
            spec.horizon_seconds
        )));
    }

    let target = match &spec.target {
        Some(t) => t.clone(),
        None => {
            note("estimate: synthesizing target from the scenario's own initial state");
            let (_, tape) = run_scenario(&scenario, steps)
                .map_err(|e| run_error(format!("target synthesis run failed: {e}")))?;
            macro_cells(tape.final_state())
        }
    };

    let mut guess = scenario.clone();
    if let Some(r) = &spec.randomize_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_override.unwrap_or(r.seed));
        let gamma = guess.config.gamma;
        for lane in guess.lanes.iter_mut() {
            if let LaneSpec::Macro { cells, u_max, .. } = lane {
                *cells = builders::random_cells(
                    cells.len(),
                    (r.rho[0], r.rho[1]),
                    (r.velocity_fraction[0], r.velocity_fraction[1]),
                    *u_max,
                    gamma,
                    &mut rng,
                );
            }
        }
    }

    let problem = EstimationProblem {
        scenario: guess.clone(),
        target,
        horizon: spec.horizon_seconds,
        settings: spec.settings.resolve(),
    };
    let result =
        estimate_initial_state(&problem).map_err(|e| map_optimize_error("estimation", e))?;

    let initial_loss = result.history.first().map_or(result.loss, |r| r.value);
    let iterations = result.history.last().map_or(0, |r| r.iteration);
    let report = EstimateReport {
        schema: ESTIMATE_SCHEMA.into(),
        horizon_seconds: spec.horizon_seconds,
        steps,
        iterations,
        initial_loss,
        final_loss: result.loss,
        reduction_factor: (result.loss > 0.0).then(|| initial_loss / result.loss),
    };

    write_history_csv(&out_dir.join("history.csv"), &result.history)
        .with_context(|| format!("writing {}", out_dir.join("history.csv").display()))?;
    let solution = scenario_with_cells(&guess, &result.cells);
    write_text(&out_dir.join("solution.json"), &(solution.to_json_pretty() + "\n"))?;
    write_json(&out_dir.join("estimate_report.json"), &report)?;

    println!(
        "estimate: loss {:.3e} -> {:.3e} over {} iterations, outputs in {}",
        report.initial_loss,
        report.final_loss,
        report.iterations,
        out_dir.display()
    );
    Ok(report)
}

/// The scenario with its initial macro cells replaced per lane.
pub fn scenario_with_cells(
    scenario: &Scenario,
    cells: &BTreeMap<u64, Vec<CellState>>,
) -> Scenario {
    let mut out = scenario.clone();
    for lane in out.lanes.iter_mut() {
        if let LaneSpec::Macro { id, cells: lane_cells, .. } = lane {
            if let Some(found) = cells.get(id) {
                *lane_cells = found.clone();
            }
        }
    }
    out
}
