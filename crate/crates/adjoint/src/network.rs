//! Network wiring and state: the compiled scenario (link maps, control
//! runtimes), the evolving network state, its stable fingerprint, and the
//! whole-run mass ledger.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use difftraffic_arz::FvmError;
use difftraffic_core::hash::{hash_bytes, StreamHasher};
use difftraffic_core::scenario::IdmRanges;
use difftraffic_core::validate::Violation;
use difftraffic_core::{
    validate_scenario, BoundaryCondition, LaneSpec, LeadBoundary, MacroLaneState, Scenario,
    ScenarioError, SignalSpec, SolverConfig,
};
use difftraffic_coupling::{CapacitorState, EmissionCredit};
use difftraffic_idm::{IdmError, MicroLaneState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tape::StepTape;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("lane {lane}: {source}")]
    Fvm { lane: u64, source: FvmError },
    #[error("lane {lane}: {source}")]
    Micro { lane: u64, source: IdmError },
    #[error("tape checkpoint {step}: recorded hash {recorded:#018x}, state hashes to {computed:#018x}")]
    TapeHash { step: usize, recorded: u64, computed: u64 },
    #[error("replay diverged at step {step}: expected {expected:#018x}, got {got:#018x}")]
    ReplayDiverged { step: usize, expected: u64, got: u64 },
    #[error("gradient seed: {0}")]
    BadSeed(String),
    #[error("tape was recorded under a different solver configuration")]
    ConfigMismatch,
}

/// Aggregation window of one micro->macro link: vehicles of `micro` with
/// front position in `(lo, hi]` are condensed into the receiving lane's
/// upstream inflow state.
#[derive(Debug, Clone)]
pub(crate) struct AggWindow {
    pub micro: u64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct PaceRuntime {
    pub lane: u64,
    /// Id of the controlled vehicle; control stops if it leaves the front.
    pub vehicle: u64,
    pub accel: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SignalRuntime {
    pub spec: SignalSpec,
    pub we: BTreeSet<u64>,
    pub ns: BTreeSet<u64>,
}

/// Compiled scenario: the static wiring and controls every step consults.
/// The evolving part lives in [`NetworkState`].
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: SolverConfig,
    /// Feeding macro lane -> micro lane receiving its emissions.
    pub(crate) feeds_micro: BTreeMap<u64, u64>,
    /// Micro lane -> the macro lane feeding it.
    pub(crate) feeding_macro: BTreeMap<u64, u64>,
    /// Receiving macro lane -> aggregation window on its feeding micro lane.
    pub(crate) agg_windows: BTreeMap<u64, AggWindow>,
    /// Emission parameter ranges, keyed by the receiving micro lane.
    pub(crate) idm_ranges: BTreeMap<u64, IdmRanges>,
    pub(crate) pace: Option<PaceRuntime>,
    pub(crate) signal: Option<SignalRuntime>,
}

/// Per-link emission bookkeeping: the accumulator plus the FIFO of credited
/// vehicles waiting for room on the receiving lane.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitorRuntime {
    pub state: CapacitorState,
    pub queue: VecDeque<EmissionCredit>,
}

/// Everything that evolves from step to step.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub step: usize,
    pub macro_lanes: BTreeMap<u64, MacroLaneState>,
    pub micro_lanes: BTreeMap<u64, MicroLaneState>,
    /// Keyed by the feeding macro lane.
    pub capacitors: BTreeMap<u64, CapacitorRuntime>,
    pub next_vehicle_id: u64,
    pub rng: ChaCha8Rng,
}

impl Engine {
    /// Compile a scenario into an engine and its initial state. Vehicle ids
    /// are the indices into the scenario's vehicle list.
    pub fn new(sc: &Scenario) -> Result<(Engine, NetworkState), EngineError> {
        let mut violations = validate_scenario(sc);

        let mut feeds_micro = BTreeMap::new();
        let mut feeding_macro = BTreeMap::new();
        let mut agg_windows = BTreeMap::new();
        for link in &sc.links {
            match (sc.lane(link.from), sc.lane(link.to)) {
                (Some(LaneSpec::Macro { .. }), Some(LaneSpec::Micro { .. })) => {
                    feeds_micro.insert(link.from, link.to);
                    feeding_macro.insert(link.to, link.from);
                }
                (
                    Some(LaneSpec::Micro { length, .. }),
                    Some(LaneSpec::Macro { dx, upstream_boundary, .. }),
                ) => {
                    if !matches!(upstream_boundary, BoundaryCondition::Inflow { .. }) {
                        violations.push(Violation {
                            entity: format!("lane {}", link.to),
                            message: "fed by a micro lane but its upstream boundary is not inflow"
                                .into(),
                        });
                    }
                    agg_windows.insert(
                        link.to,
                        AggWindow { micro: link.from, lo: length - dx, hi: *length },
                    );
                }
                _ => {}
            }
        }
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations).into());
        }

        let mut idm_ranges = BTreeMap::new();
        for lane in &sc.lanes {
            if let LaneSpec::Micro { id, idm_ranges: Some(r), .. } = lane {
                if feeding_macro.contains_key(id) {
                    idm_ranges.insert(*id, *r);
                }
            }
        }

        let pace = sc.controls.as_ref().and_then(|c| c.pace_car.as_ref()).map(|p| {
            let vehicle = sc
                .vehicles
                .iter()
                .position(|v| v.lane == p.lane)
                .expect("validated pace lane has a vehicle") as u64;
            PaceRuntime { lane: p.lane, vehicle, accel: p.accel.clone() }
        });
        let signal = sc.controls.as_ref().and_then(|c| c.signal.as_ref()).map(|s| SignalRuntime {
            spec: s.clone(),
            we: s.we_lanes.iter().copied().collect(),
            ns: s.ns_lanes.iter().copied().collect(),
        });

        let mut macro_lanes = BTreeMap::new();
        let mut micro_lanes = BTreeMap::new();
        for lane in &sc.lanes {
            match lane {
                LaneSpec::Macro { id, dx, u_max, cells, upstream_boundary, downstream_boundary } => {
                    macro_lanes.insert(
                        *id,
                        MacroLaneState {
                            cells: cells.clone(),
                            dx: *dx,
                            u_max: *u_max,
                            upstream_boundary: *upstream_boundary,
                            downstream_boundary: *downstream_boundary,
                        },
                    );
                }
                LaneSpec::Micro { id, length, lead_boundary, .. } => {
                    micro_lanes.insert(
                        *id,
                        MicroLaneState {
                            vehicles: Vec::new(),
                            length: *length,
                            lead_boundary: *lead_boundary,
                        },
                    );
                }
            }
        }
        for (i, spec) in sc.vehicles.iter().enumerate() {
            let lane = micro_lanes.get_mut(&spec.lane).expect("validated vehicle lane");
            lane.vehicles.push(difftraffic_core::VehicleState {
                id: i as u64,
                p: spec.p,
                v: spec.v,
                params: spec.params,
            });
        }

        let capacitors = feeds_micro
            .keys()
            .map(|&m| (m, CapacitorRuntime { state: CapacitorState::new(), queue: VecDeque::new() }))
            .collect();

        let engine = Engine {
            config: sc.config.clone(),
            feeds_micro,
            feeding_macro,
            agg_windows,
            idm_ranges,
            pace,
            signal,
        };
        let state = NetworkState {
            step: 0,
            macro_lanes,
            micro_lanes,
            capacitors,
            next_vehicle_id: sc.vehicles.len() as u64,
            rng: ChaCha8Rng::seed_from_u64(sc.config.rng_seed),
        };
        Ok((engine, state))
    }

    /// Downstream flux weight of a macro lane at a step: the signal's window
    /// function when the lane is gated, 1 otherwise.
    pub fn lane_weight(&self, lane: u64, step: usize) -> f64 {
        let Some(sig) = &self.signal else { return 1.0 };
        let t = step as f64 * self.config.dt;
        if sig.we.contains(&lane) {
            signal_weights(&sig.spec, t, self.config.dt).0
        } else if sig.ns.contains(&lane) {
            signal_weights(&sig.spec, t, self.config.dt).1
        } else {
            1.0
        }
    }

    /// Lane and vehicle id of the pace-controlled vehicle, when one exists.
    pub fn pace_identity(&self) -> Option<(u64, u64)> {
        self.pace.as_ref().map(|p| (p.lane, p.vehicle))
    }

    pub fn config_digest(&self) -> u64 {
        hash_bytes(serde_json::to_string(&self.config).expect("config serializes").as_bytes())
    }

    /// Total vehicle-equivalent content: macro mass over the mean vehicle
    /// length, micro vehicle lengths over the same, plus each capacitor's
    /// fractional charge and queued credits.
    pub fn vehicle_equivalents(&self, state: &NetworkState) -> f64 {
        let len = self.config.mean_vehicle_length;
        let macro_part: f64 = state.macro_lanes.values().map(|l| l.mass() / len).sum();
        let micro_part: f64 = state
            .micro_lanes
            .values()
            .flat_map(|l| l.vehicles.iter())
            .map(|v| v.params.length / len)
            .sum();
        let cap_part: f64 = state
            .capacitors
            .values()
            .map(|c| c.state.acc.fract() + c.state.pending as f64)
            .sum();
        macro_part + micro_part + cap_part
    }

    /// Whole-run mass ledger in vehicle equivalents. External flows are the
    /// boundary fluxes of lanes whose respective end is not coupled, plus the
    /// exits of micro lanes that feed nothing. In deterministic conversion
    /// mode `balance` stays bounded by the coupling seams' one-step lag.
    pub fn mass_audit(&self, tape: &StepTape) -> MassAudit {
        let len = self.config.mean_vehicle_length;
        let dt = self.config.dt;
        let start = self.vehicle_equivalents(tape.initial_state());
        let end = self.vehicle_equivalents(tape.final_state());

        let mut external_in = 0.0;
        let mut external_out = 0.0;
        for record in &tape.records {
            for (&lane, mr) in &record.macro_records {
                if !self.agg_windows.contains_key(&lane) {
                    external_in += mr.first_flux * dt / len;
                }
                if !self.feeds_micro.contains_key(&lane) {
                    external_out += mr.last_flux * dt / len;
                }
            }
            for (&lane, mr) in &record.micro_records {
                if !self.feeding_macro.contains_key(&lane) {
                    external_out += mr.exited.iter().map(|(_, l)| l / len).sum::<f64>();
                }
            }
        }
        let balance = (end - start) - (external_in - external_out);
        MassAudit { start, end, external_in, external_out, balance }
    }
}

/// Vehicle-equivalent ledger of one recorded run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAudit {
    pub start: f64,
    pub end: f64,
    pub external_in: f64,
    pub external_out: f64,
    /// (end - start) - (external_in - external_out); zero for a closed book.
    pub balance: f64,
}

impl NetworkState {
    /// Stable fingerprint of every bit that can influence the future of the
    /// run: lane states, boundary recipes, capacitor contents, the id
    /// counter, and the generator position.
    pub fn digest(&self) -> u64 {
        let mut h = StreamHasher::new();
        h.write_u64(self.step as u64);
        for (id, lane) in &self.macro_lanes {
            h.write_u64(*id);
            h.write_f64(lane.dx);
            h.write_f64(lane.u_max);
            for c in &lane.cells {
                h.write_f64(c.rho);
                h.write_f64(c.y);
            }
            for bc in [&lane.upstream_boundary, &lane.downstream_boundary] {
                match bc {
                    BoundaryCondition::Inflow { q } => {
                        h.write_u64(0);
                        h.write_f64(q.rho);
                        h.write_f64(q.y);
                    }
                    BoundaryCondition::Outflow => h.write_u64(1),
                    BoundaryCondition::Wall => h.write_u64(2),
                }
            }
        }
        for (id, lane) in &self.micro_lanes {
            h.write_u64(*id);
            h.write_f64(lane.length);
            match lane.lead_boundary {
                LeadBoundary::Free => h.write_u64(0),
                LeadBoundary::VirtualLeader { p, v } => {
                    h.write_u64(1);
                    h.write_f64(p);
                    h.write_f64(v);
                }
            }
            h.write_u64(lane.vehicles.len() as u64);
            for veh in &lane.vehicles {
                h.write_u64(veh.id);
                h.write_f64(veh.p);
                h.write_f64(veh.v);
                for x in [
                    veh.params.s_min,
                    veh.params.t_pref,
                    veh.params.a_max,
                    veh.params.a_pref,
                    veh.params.v_targ,
                    veh.params.length,
                ] {
                    h.write_f64(x);
                }
            }
        }
        for (id, cap) in &self.capacitors {
            h.write_u64(*id);
            h.write_f64(cap.state.acc);
            h.write_u64(cap.state.pending);
            match cap.state.last_credit_step {
                None => h.write_u64(0),
                Some(s) => {
                    h.write_u64(1);
                    h.write_u64(s as u64);
                }
            }
            for credit in &cap.queue {
                h.write_u64(credit.step_lo as u64);
                h.write_u64(credit.step_hi as u64);
            }
        }
        h.write_u64(self.next_vehicle_id);
        h.write_bytes(&self.rng.get_seed());
        let pos = self.rng.get_word_pos();
        h.write_u64(pos as u64);
        h.write_u64((pos >> 64) as u64);
        h.finish()
    }
}

/// Logistic window with IEEE-safe tails.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn green_at(spec: &SignalSpec, k: i64) -> f64 {
    if k < 0 {
        return spec.phase_length / 2.0;
    }
    spec.green_we.get(k as usize).copied().unwrap_or(spec.phase_length / 2.0)
}

/// Smoothed green-window weights (west-east, north-south) at time `t`. Each
/// phase of length P gives the west-east approaches a logistic window of
/// width `green_we[k]` at the phase start and the north-south approaches the
/// remainder; `dt` sets the transition sharpness. Phases beyond the schedule
/// reuse an even split. The two weights sum to one away from the run's ends.
pub fn signal_weights(spec: &SignalSpec, t: f64, dt: f64) -> (f64, f64) {
    let p = spec.phase_length;
    let k0 = (t / p).floor() as i64;
    let mut we = 0.0;
    let mut ns = 0.0;
    for k in [k0 - 1, k0, k0 + 1] {
        if k < 0 {
            continue;
        }
        let start = k as f64 * p;
        let g = green_at(spec, k);
        we += sigmoid((t - start) / dt) - sigmoid((t - start - g) / dt);
        ns += sigmoid((t - start - g) / dt) - sigmoid((t - start - p) / dt);
    }
    (we, ns)
}

/// Sensitivities of the two weights to each scheduled green time: entries
/// `(k, d_we/d_green[k], d_ns/d_green[k])` for the phases near `t` that the
/// schedule actually lists.
pub fn signal_weight_partials(spec: &SignalSpec, t: f64, dt: f64) -> Vec<(usize, f64, f64)> {
    let p = spec.phase_length;
    let k0 = (t / p).floor() as i64;
    let mut out = Vec::new();
    for k in [k0 - 1, k0, k0 + 1] {
        if k < 0 || k as usize >= spec.green_we.len() {
            continue;
        }
        let start = k as f64 * p;
        let g = green_at(spec, k);
        let s = sigmoid((t - start - g) / dt);
        let d = s * (1.0 - s) / dt;
        out.push((k as usize, d, -d));
    }
    out
}
