//! Initial-state estimation: recover the starting macro cells that reproduce
//! a recorded final state, by projected gradient descent on the final-state
//! mean squared error with adjoint gradients.

use std::collections::BTreeMap;

use difftraffic_adjoint::{run_scenario, NetworkState, StateSeed};
use difftraffic_core::{velocity_from_state, CellState, LaneSpec, Scenario, Vec2};

use crate::descent::{drive, DescentSettings, Evaluation, IterationRecord, Sense};
use crate::problem::integer_steps;
use crate::OptimizeError;

/// Estimation problem: find initial macro cells whose rollout ends at
/// `target` after `horizon` seconds. The scenario's own cells are the
/// starting guess, and every macro cell is a decision variable.
#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub scenario: Scenario,
    /// Macro cell states the run should end in, keyed by lane.
    pub target: BTreeMap<u64, Vec<CellState>>,
    /// Episode length in seconds; must be an integer number of steps.
    pub horizon: f64,
    pub settings: DescentSettings,
}

/// Output of [`estimate_initial_state`].
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Best initial cells found, keyed by lane.
    pub cells: BTreeMap<u64, Vec<CellState>>,
    /// Loss of the best iterate.
    pub loss: f64,
    pub history: Vec<IterationRecord>,
}

/// The macro cell states of a network snapshot, keyed by lane.
pub fn macro_cells(state: &NetworkState) -> BTreeMap<u64, Vec<CellState>> {
    state.macro_lanes.iter().map(|(&id, lane)| (id, lane.cells.clone())).collect()
}

/// Mean squared error over every scalar component of the two cell maps.
pub fn estimation_loss(
    estimate: &BTreeMap<u64, Vec<CellState>>,
    target: &BTreeMap<u64, Vec<CellState>>,
) -> Result<f64, OptimizeError> {
    if !estimate.keys().eq(target.keys()) {
        return Err(OptimizeError::ShapeMismatch("lane sets differ".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (lane, est) in estimate {
        let tgt = &target[lane];
        if est.len() != tgt.len() {
            return Err(OptimizeError::ShapeMismatch(format!(
                "lane {lane} has {} cells against {}",
                est.len(),
                tgt.len()
            )));
        }
        for (e, t) in est.iter().zip(tgt) {
            sum += (e.rho - t.rho).powi(2) + (e.y - t.y).powi(2);
            n += 2;
        }
    }
    if n == 0 {
        return Err(OptimizeError::ShapeMismatch("no cells to compare".into()));
    }
    Ok(sum / n as f64)
}

/// Projected gradient descent on the final-state mismatch. Projection clamps
/// each cell's density to [0, 1] and velocity to [0, u_max], so every iterate
/// is an admissible scenario; an iterate whose rollout fails is rejected and
/// the step halved.
pub fn estimate_initial_state(
    problem: &EstimationProblem,
) -> Result<EstimationResult, OptimizeError> {
    let sc = &problem.scenario;
    let (shape, steps) = checked_shape(problem)?;
    let gamma = sc.config.gamma;
    let x0 = flatten_cells(sc);
    let out = drive(
        x0,
        Sense::Minimize,
        &problem.settings,
        |x| project_cells(x, &shape, gamma),
        |x| evaluate_initial(sc, &shape, steps, x, &problem.target),
    )?;
    Ok(EstimationResult {
        cells: unflatten_cells(&out.best, &shape),
        loss: out.best_value,
        history: out.history,
    })
}

/// Loss and gradient at the problem's current initial cells, from one
/// recorded rollout and reverse sweep. The gradient is flattened in scenario
/// lane order as (rho, y) pairs.
pub fn estimation_gradient(problem: &EstimationProblem) -> Result<(f64, Vec<f64>), OptimizeError> {
    let (shape, steps) = checked_shape(problem)?;
    let x0 = flatten_cells(&problem.scenario);
    let e = evaluate_initial(&problem.scenario, &shape, steps, &x0, &problem.target)?;
    Ok((e.value, e.gradient))
}

/// Shape and step-count validation shared by the estimation entry points.
fn checked_shape(problem: &EstimationProblem) -> Result<(Vec<(u64, usize, f64)>, usize), OptimizeError> {
    let sc = &problem.scenario;
    let steps = integer_steps(problem.horizon, sc.config.dt)?;
    let shape = macro_shape(sc);
    if shape.is_empty() {
        return Err(OptimizeError::BadProblem("scenario has no macro lanes".into()));
    }
    if problem.target.len() != shape.len() {
        return Err(OptimizeError::ShapeMismatch(format!(
            "target covers {} lanes, scenario has {} macro lanes",
            problem.target.len(),
            shape.len()
        )));
    }
    for &(id, cells, _) in &shape {
        match problem.target.get(&id) {
            Some(t) if t.len() == cells => {}
            Some(t) => {
                return Err(OptimizeError::ShapeMismatch(format!(
                    "target lane {id} has {} cells, scenario lane has {cells}",
                    t.len()
                )))
            }
            None => {
                return Err(OptimizeError::ShapeMismatch(format!("target is missing lane {id}")))
            }
        }
    }
    Ok((shape, steps))
}

/// (lane id, cell count, u_max) of each macro lane, in scenario order.
fn macro_shape(sc: &Scenario) -> Vec<(u64, usize, f64)> {
    sc.lanes
        .iter()
        .filter_map(|lane| match lane {
            LaneSpec::Macro { id, cells, u_max, .. } => Some((*id, cells.len(), *u_max)),
            LaneSpec::Micro { .. } => None,
        })
        .collect()
}

fn flatten_cells(sc: &Scenario) -> Vec<f64> {
    let mut x = Vec::new();
    for lane in &sc.lanes {
        if let LaneSpec::Macro { cells, .. } = lane {
            for c in cells {
                x.push(c.rho);
                x.push(c.y);
            }
        }
    }
    x
}

fn unflatten_cells(x: &[f64], shape: &[(u64, usize, f64)]) -> BTreeMap<u64, Vec<CellState>> {
    let mut out = BTreeMap::new();
    let mut k = 0;
    for &(id, cells, _) in shape {
        let lane = (0..cells)
            .map(|_| {
                let c = CellState::new(x[k], x[k + 1]);
                k += 2;
                c
            })
            .collect();
        out.insert(id, lane);
    }
    out
}

fn project_cells(x: &mut [f64], shape: &[(u64, usize, f64)], gamma: f64) {
    let mut k = 0;
    for &(_, cells, u_max) in shape {
        for _ in 0..cells {
            let rho = x[k].clamp(0.0, 1.0);
            let u = velocity_from_state(CellState::new(rho, x[k + 1]), u_max, gamma)
                .u
                .clamp(0.0, u_max);
            let c = CellState::from_velocity(rho, u, u_max, gamma);
            x[k] = c.rho;
            x[k + 1] = c.y;
            k += 2;
        }
    }
}

fn evaluate_initial(
    sc: &Scenario,
    shape: &[(u64, usize, f64)],
    steps: usize,
    x: &[f64],
    target: &BTreeMap<u64, Vec<CellState>>,
) -> Result<Evaluation, OptimizeError> {
    let cand = scenario_with_cells(sc, x);
    let (engine, tape) =
        run_scenario(&cand, steps).map_err(|e| OptimizeError::Rollout(e.to_string()))?;
    let finals = macro_cells(tape.final_state());
    let value = estimation_loss(&finals, target)?;

    let n = 2 * shape.iter().map(|&(_, cells, _)| cells).sum::<usize>();
    let mut seed = StateSeed::default();
    for (lane, est) in &finals {
        let cot = est
            .iter()
            .zip(&target[lane])
            .map(|(e, t)| Vec2(2.0 * (e.rho - t.rho) / n as f64, 2.0 * (e.y - t.y) / n as f64))
            .collect();
        seed.macro_cells.insert(*lane, cot);
    }
    let bundle =
        engine.backward(&tape, &seed).map_err(|e| OptimizeError::Rollout(e.to_string()))?;

    let mut gradient = Vec::with_capacity(x.len());
    for &(id, cells, _) in shape {
        match bundle.macro_cells.get(&id) {
            Some(g) => gradient.extend(g.iter().flat_map(|v| [v.0, v.1])),
            None => gradient.extend(std::iter::repeat(0.0).take(2 * cells)),
        }
    }
    Ok(Evaluation { value, gradient })
}

/// The scenario with its macro cells replaced by the flattened vector `x`.
pub(crate) fn scenario_with_cells(sc: &Scenario, x: &[f64]) -> Scenario {
    let mut out = sc.clone();
    let mut k = 0;
    for lane in &mut out.lanes {
        if let LaneSpec::Macro { cells, .. } = lane {
            for c in cells.iter_mut() {
                *c = CellState::new(x[k], x[k + 1]);
                k += 2;
            }
        }
    }
    out
}
