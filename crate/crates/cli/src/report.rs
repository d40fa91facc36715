//! Post-run report assembled from the tape: wall-clock timings, per-lane
//! summaries, and the counters that flag a run brushing the model's limits.

use difftraffic_adjoint::{CellClamp, Engine, StepTape};
use difftraffic_core::{velocity_from_state, SolverConfig};
use serde::{Deserialize, Serialize};

pub const RUN_REPORT_SCHEMA: &str = "difftraffic.run-report/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub steps: usize,
    /// Monotone-clock wall time of the recorded forward run.
    pub forward_seconds: f64,
    pub steps_per_sec: f64,
    /// Present only for commands that ran a reverse sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_seconds: Option<f64>,
    pub lanes: Vec<LaneSummary>,
    pub counters: RunCounters,
    pub config: SolverConfig,
}

/// Final-state digest of one lane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneSummary {
    pub id: u64,
    pub kind: String,
    pub cells: usize,
    pub vehicles: usize,
    /// Macro: final sum of rho dx. Micro: final vehicle count.
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_speed: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunCounters {
    /// Cell updates whose density had to be clamped back into [0, 1].
    pub macro_density_clamps: u64,
    /// Vehicle speed updates clamped at zero.
    pub micro_speed_clamps: u64,
    pub vehicles_emitted: u64,
    pub vehicles_exited: u64,
    /// Total clamp events; zero for a run that stayed inside the model's
    /// comfortable regime.
    pub warnings: u64,
}

pub fn build_report(engine: &Engine, tape: &StepTape, forward_seconds: f64) -> RunReport {
    let steps = tape.steps();
    let final_state = tape.final_state();
    let gamma = engine.config.gamma;

    let mut lanes = Vec::new();
    for (&id, lane) in &final_state.macro_lanes {
        let rhos = lane.cells.iter().map(|c| c.rho);
        let mean_speed = if lane.cells.is_empty() {
            None
        } else {
            let sum: f64 = lane
                .cells
                .iter()
                .map(|c| velocity_from_state(*c, lane.u_max, gamma).u)
                .sum();
            Some(sum / lane.cells.len() as f64)
        };
        lanes.push(LaneSummary {
            id,
            kind: "macro".into(),
            cells: lane.cells.len(),
            vehicles: 0,
            mass: lane.mass(),
            min_rho: rhos.clone().fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.min(r)))),
            max_rho: rhos.fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r)))),
            mean_speed,
        });
    }
    for (&id, lane) in &final_state.micro_lanes {
        let n = lane.vehicles.len();
        lanes.push(LaneSummary {
            id,
            kind: "micro".into(),
            cells: 0,
            vehicles: n,
            mass: n as f64,
            min_rho: None,
            max_rho: None,
            mean_speed: (n > 0)
                .then(|| lane.vehicles.iter().map(|v| v.v).sum::<f64>() / n as f64),
        });
    }
    lanes.sort_by_key(|l| l.id);

    let mut counters = RunCounters::default();
    for record in &tape.records {
        for mr in record.macro_records.values() {
            counters.macro_density_clamps +=
                mr.clamps.iter().filter(|c| **c != CellClamp::Free).count() as u64;
        }
        for mr in record.micro_records.values() {
            counters.micro_speed_clamps += mr.clamped.iter().filter(|c| **c).count() as u64;
            counters.vehicles_exited += mr.exited.len() as u64;
        }
        for em in record.emissions.values() {
            counters.vehicles_emitted += u64::from(em.placed.is_some());
        }
    }
    counters.warnings = counters.macro_density_clamps + counters.micro_speed_clamps;

    RunReport {
        schema: RUN_REPORT_SCHEMA.into(),
        steps,
        forward_seconds,
        steps_per_sec: if forward_seconds > 0.0 { steps as f64 / forward_seconds } else { 0.0 },
        backward_seconds: None,
        lanes,
        counters,
        config: engine.config.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use difftraffic_adjoint::run_scenario;
    use difftraffic_core::builders;

    #[test]
    fn report_summarizes_lanes_and_counts_nothing_on_a_calm_run() {
        let sc = builders::macro_lane_scenario(6);
        let (engine, tape) = run_scenario(&sc, 10).unwrap();
        let report = build_report(&engine, &tape, 0.25);
        assert_eq!(report.steps, 10);
        assert_eq!(report.steps_per_sec, 40.0);
        assert_eq!(report.lanes.len(), 1);
        assert_eq!(report.lanes[0].kind, "macro");
        assert_eq!(report.lanes[0].cells, 6);
        assert!(report.lanes[0].mass > 0.0);
        assert_eq!(report.counters.warnings, 0);
        assert!(report.backward_seconds.is_none());
    }

    #[test]
    fn report_counts_emissions_and_exits_on_the_hybrid_chain() {
        let sc = builders::hybrid_chain_scenario(&builders::HybridChainParams::default());
        let (engine, tape) = run_scenario(&sc, 300).unwrap();
        let report = build_report(&engine, &tape, 1.0);
        assert!(report.counters.vehicles_emitted > 0);
        assert!(report.counters.vehicles_exited > 0);
        let kinds: Vec<&str> = report.lanes.iter().map(|l| l.kind.as_str()).collect();
        assert_eq!(kinds, ["macro", "micro", "macro"]);
    }

    #[test]
    fn report_round_trips_through_json() {
        let sc = builders::single_cell_scenario();
        let (engine, tape) = run_scenario(&sc, 1).unwrap();
        let report = build_report(&engine, &tape, 0.5);
        let text = serde_json::to_string_pretty(&report).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.schema, RUN_REPORT_SCHEMA);
        assert_eq!(back.steps, report.steps);
        assert_eq!(back.lanes.len(), report.lanes.len());
    }
}
