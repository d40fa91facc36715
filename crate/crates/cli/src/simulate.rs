//! Forward simulation command: run a scenario, stream the state history to
//! CSV, and summarize the run in a JSON report.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use difftraffic_adjoint::run_scenario;
use difftraffic_core::{velocity_from_state, ConversionMode};

use crate::io::{load_scenario, note, run_error, sig17, write_json, write_text};
use crate::report::{build_report, RunReport};

#[derive(Debug, Default, Clone)]
pub struct SimulateOptions {
    pub seed: Option<u64>,
    pub mode: Option<ConversionMode>,
}

pub fn cmd_simulate(
    scenario_path: &Path,
    steps: usize,
    out_dir: &Path,
    opts: &SimulateOptions,
) -> Result<RunReport> {
    let mut scenario = load_scenario(scenario_path)?;
    if let Some(seed) = opts.seed {
        scenario.config.rng_seed = seed;
    }
    if let Some(mode) = opts.mode {
        scenario.config.conversion_mode = mode;
    }
    note(&format!(
        "simulate: {} steps of {}",
        steps,
        scenario_path.display()
    ));

    let start = Instant::now();
    let (engine, tape) =
        run_scenario(&scenario, steps).map_err(|e| run_error(format!("simulation failed: {e}")))?;
    let forward_seconds = start.elapsed().as_secs_f64();

    write_text(
        &out_dir.join("states.csv"),
        &states_csv(&tape, engine.config.dt, engine.config.gamma),
    )?;
    write_text(&out_dir.join("emissions.csv"), &emissions_csv(&tape))?;
    let report = build_report(&engine, &tape, forward_seconds);
    write_json(&out_dir.join("report.json"), &report)?;

    println!(
        "simulated {} steps in {:.3} s ({:.0} steps/s), {} warnings, outputs in {}",
        report.steps,
        report.forward_seconds,
        report.steps_per_sec,
        report.counters.warnings,
        out_dir.display()
    );
    Ok(report)
}

/// One row per cell and per vehicle per recorded state, including the initial
/// state at step 0.
fn states_csv(tape: &difftraffic_adjoint::StepTape, dt: f64, gamma: f64) -> String {
    let mut out = String::from("step,time,lane_id,record,index,v1,v2,v3\n");
    for state in &tape.snapshots {
        let time = state.step as f64 * dt;
        for (&lane_id, lane) in &state.macro_lanes {
            for (i, cell) in lane.cells.iter().enumerate() {
                let speed = velocity_from_state(*cell, lane.u_max, gamma).u;
                let _ = writeln!(
                    out,
                    "{},{},{},cell,{},{},{},{}",
                    state.step,
                    sig17(time),
                    lane_id,
                    i,
                    sig17(cell.rho),
                    sig17(cell.y),
                    sig17(speed),
                );
            }
        }
        for (&lane_id, lane) in &state.micro_lanes {
            for v in &lane.vehicles {
                let _ = writeln!(
                    out,
                    "{},{},{},vehicle,{},{},{},",
                    state.step,
                    sig17(time),
                    lane_id,
                    v.id,
                    sig17(v.p),
                    sig17(v.v),
                );
            }
        }
    }
    out
}

fn emissions_csv(tape: &difftraffic_adjoint::StepTape) -> String {
    let mut out = String::from("step,lane,increment,drawn,placed_id\n");
    for (t, record) in tape.records.iter().enumerate() {
        for (&lane, em) in &record.emissions {
            let drawn = em.drawn.map(|d| d.to_string()).unwrap_or_default();
            let placed = em
                .placed
                .as_ref()
                .map(|v| v.id.to_string())
                .unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", t, lane, sig17(em.increment), drawn, placed);
        }
    }
    out
}
