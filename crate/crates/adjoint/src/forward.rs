//! One network step: macro finite-volume updates under the signal weights,
//! emission of discrete vehicles from charged flux capacitors, micro updates
//! with exit handling, and window aggregation back into macro inflow states.
//! Every discrete decision is recorded so the reverse sweep can replay the
//! exact branch structure.

use std::collections::BTreeMap;

use difftraffic_arz::{flux, fvm_step, RiemannCase};
use difftraffic_core::{BoundaryCondition, CellState, ConversionMode, Scenario, VehicleState};
use difftraffic_coupling::{
    aggregate_window, can_place, capacitor_advance, capacitor_increment, emission_velocity,
    sample_poisson, Aggregate, EmissionCredit,
};
use difftraffic_idm::micro_step;
use thiserror::Error;

use crate::network::{Engine, EngineError, NetworkState};
use crate::tape::StepTape;

#[derive(Debug, Clone)]
pub struct MacroStepRecord {
    /// Interface case tags, one per interface, replay-checked backward.
    pub cases: Vec<RiemannCase>,
    pub clamps: Vec<difftraffic_arz::CellClamp>,
    /// Downstream flux weight applied this step.
    pub weight: f64,
    /// Mass flux through the upstream interface.
    pub first_flux: f64,
    /// Mass flux through the downstream interface, weight included.
    pub last_flux: f64,
}

#[derive(Debug, Clone)]
pub struct MicroStepRecord {
    /// Speed-clamp mask over the step's input vehicles (emitted one last).
    pub clamped: Vec<bool>,
    /// (id, length) of vehicles that left the lane this step.
    pub exited: Vec<(u64, f64)>,
    /// Control acceleration applied to the front vehicle, when paced.
    pub pace: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EmissionRecord {
    /// Vehicle-equivalent charge added this step (weighted flux integral).
    pub increment: f64,
    /// Credits issued this step with their charge intervals.
    pub credits: Vec<EmissionCredit>,
    /// Poisson draw, in stochastic mode.
    pub drawn: Option<u64>,
    /// The vehicle placed on the receiving lane, as it entered the step.
    pub placed: Option<VehicleState>,
    /// Charge interval of the placed vehicle's credit.
    pub placed_interval: Option<EmissionCredit>,
    /// Post-step state of the feeding lane's last cell, the source of both
    /// the charge increment and the release speed.
    pub edge_post: CellState,
}

#[derive(Debug, Clone)]
pub struct AggRecord {
    pub aggregate: Aggregate,
    pub window_lo: f64,
    pub window_hi: f64,
}

/// Everything one step decided, keyed by lane id (`emissions` by the feeding
/// macro lane, `aggregations` by the receiving macro lane).
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub macro_records: BTreeMap<u64, MacroStepRecord>,
    pub micro_records: BTreeMap<u64, MicroStepRecord>,
    pub emissions: BTreeMap<u64, EmissionRecord>,
    pub aggregations: BTreeMap<u64, AggRecord>,
}

/// A failed recorded run: the error plus the tape up to the failing step.
#[derive(Debug, Error)]
#[error("simulation aborted at step {step}: {source}")]
pub struct SimAbort {
    pub step: usize,
    pub source: EngineError,
    pub tape: StepTape,
}

impl Engine {
    /// Advance the network one step, returning the step's record.
    pub fn step(&self, state: &mut NetworkState) -> Result<StepRecord, EngineError> {
        let cfg = &self.config;
        let t = state.step;
        let mut macro_records = BTreeMap::new();
        let mut micro_records = BTreeMap::new();
        let mut emissions = BTreeMap::new();
        let mut aggregations = BTreeMap::new();

        // Macro updates. Lanes only couple through boundary states written at
        // the end of the previous step, so in-place per-lane commits are safe.
        for (&id, lane) in state.macro_lanes.iter_mut() {
            let weight = self.lane_weight(id, t);
            let out = fvm_step(lane, cfg.gamma, cfg.dt, weight)
                .map_err(|source| EngineError::Fvm { lane: id, source })?;
            let n = lane.cells.len();
            let first_flux = flux(out.sols[0].q0, lane.u_max, cfg.gamma).0;
            let last_flux = flux(out.sols[n].q0, lane.u_max, cfg.gamma).0 * weight;
            macro_records.insert(
                id,
                MacroStepRecord {
                    cases: out.sols.iter().map(|s| s.case).collect(),
                    clamps: out.clamps,
                    weight,
                    first_flux,
                    last_flux,
                },
            );
            lane.cells = out.cells;
        }

        // Emissions: charge each capacitor from its feeding lane's post-step
        // edge, then try to place at most one queued vehicle per link.
        let NetworkState { macro_lanes, micro_lanes, capacitors, next_vehicle_id, rng, .. } =
            state;
        for (&m, &c) in &self.feeds_micro {
            let lane_m = &macro_lanes[&m];
            let edge_post = *lane_m.cells.last().expect("macro lane has cells");
            let weight = macro_records[&m].weight;
            let increment =
                weight * capacitor_increment(edge_post, lane_m.u_max, cfg.gamma, cfg.dt, cfg.mean_vehicle_length);

            let drawn = match cfg.conversion_mode {
                ConversionMode::Deterministic => None,
                ConversionMode::Stochastic => Some(sample_poisson(rng, increment)),
            };
            let cap = capacitors.get_mut(&m).expect("capacitor per feeding lane");
            let (next, credits) = capacitor_advance(&cap.state, increment, t, drawn);
            cap.state = next;
            cap.queue.extend(credits.iter().copied());

            let mut placed = None;
            let mut placed_interval = None;
            if !cap.queue.is_empty() {
                let params = self.idm_ranges[&c].sample(rng);
                let micro = micro_lanes.get_mut(&c).expect("linked micro lane");
                if can_place(micro.vehicles.last(), params.s_min) {
                    let credit = cap.queue.pop_front().expect("queue non-empty");
                    cap.state.pending -= 1;
                    let veh = VehicleState {
                        id: *next_vehicle_id,
                        p: 0.0,
                        v: emission_velocity(edge_post, lane_m.u_max, cfg.gamma),
                        params,
                    };
                    *next_vehicle_id += 1;
                    micro.vehicles.push(veh);
                    placed = Some(veh);
                    placed_interval = Some(credit);
                }
            }
            emissions.insert(
                m,
                EmissionRecord { increment, credits, drawn, placed, placed_interval, edge_post },
            );
        }

        // Micro updates.
        for (&id, lane) in state.micro_lanes.iter_mut() {
            let pace = self.pace.as_ref().and_then(|p| {
                (p.lane == id && lane.vehicles.first().map(|v| v.id) == Some(p.vehicle))
                    .then(|| p.accel.get(t).copied().unwrap_or(0.0))
            });
            let out = micro_step(lane, cfg.dt, cfg.delta_exponent, pace)
                .map_err(|source| EngineError::Micro { lane: id, source })?;
            micro_records.insert(
                id,
                MicroStepRecord {
                    clamped: out.clamped,
                    exited: out.exited.iter().map(|v| (v.id, v.params.length)).collect(),
                    pace,
                },
            );
            lane.vehicles = out.vehicles;
        }

        // Aggregations: condense each feeding window into the receiving
        // lane's upstream inflow state for the next step.
        for (&m2, w) in &self.agg_windows {
            let vehicles = &state.micro_lanes[&w.micro].vehicles;
            let lane = state.macro_lanes.get_mut(&m2).expect("receiving macro lane");
            let agg = aggregate_window(vehicles, w.lo, w.hi, lane.u_max, cfg.gamma);
            lane.upstream_boundary = BoundaryCondition::Inflow { q: agg.q };
            aggregations
                .insert(m2, AggRecord { aggregate: agg, window_lo: w.lo, window_hi: w.hi });
        }

        state.step += 1;
        Ok(StepRecord { macro_records, micro_records, emissions, aggregations })
    }

    /// Advance `steps` steps without recording.
    pub fn simulate(&self, state: &mut NetworkState, steps: usize) -> Result<(), EngineError> {
        for _ in 0..steps {
            self.step(state)?;
        }
        Ok(())
    }

    /// Run `steps` steps from `initial`, checkpointing every state and
    /// recording every step. On failure the partial tape rides along.
    pub fn simulate_and_record(
        &self,
        initial: &NetworkState,
        steps: usize,
    ) -> Result<StepTape, Box<SimAbort>> {
        let mut tape = StepTape {
            config_hash: self.config_digest(),
            snapshots: Vec::with_capacity(steps + 1),
            records: Vec::with_capacity(steps),
            hashes: Vec::with_capacity(steps),
        };
        let mut state = initial.clone();
        tape.snapshots.push(state.clone());
        for _ in 0..steps {
            let step = state.step;
            match self.step(&mut state) {
                Ok(record) => {
                    tape.records.push(record);
                    tape.hashes.push(state.digest());
                    tape.snapshots.push(state.clone());
                }
                Err(source) => return Err(Box::new(SimAbort { step, source, tape })),
            }
        }
        Ok(tape)
    }
}

/// Compile and record a scenario in one call, discarding any partial tape.
pub fn run_scenario(sc: &Scenario, steps: usize) -> Result<(Engine, StepTape), EngineError> {
    let (engine, state) = Engine::new(sc)?;
    let tape = engine.simulate_and_record(&state, steps).map_err(|abort| abort.source)?;
    Ok((engine, tape))
}
