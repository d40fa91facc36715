//! The reverse sweep. Walks the tape from the last step to the first,
//! rebuilding each step's Jacobian blocks from the checkpointed states and
//! applying their transposes in the exact reverse of the forward phase
//! order: aggregation, micro update, emission, macro update. Cotangents on
//! controls and scalar parameters accumulate on the way; cotangents on the
//! step-0 state are the reported gradient.

use std::collections::BTreeMap;

use difftraffic_arz::{fvm_step_adjoint, fvm_step_jacobians, interface_profile, verify_cases};
use difftraffic_core::Vec2;
use difftraffic_coupling::{
    backward_through_aggregation, backward_through_emission, emission_velocity_partials,
    inflow_state_adjoint, EmissionCredit,
};
use difftraffic_idm::{micro_step_adjoint, micro_step_jacobians, MicroLaneState};

use crate::bundle::GradientBundle;
use crate::network::{signal_weight_partials, Engine, EngineError};
use crate::tape::StepTape;

/// Loss cotangent on one recorded state: dL/d(cells) per macro lane and
/// dL/d(p, v) per vehicle id.
#[derive(Debug, Clone, Default)]
pub struct StateSeed {
    pub macro_cells: BTreeMap<u64, Vec<Vec2>>,
    pub vehicles: BTreeMap<u64, Vec2>,
}

impl Engine {
    /// Pull a final-state cotangent back to the run's inputs.
    pub fn backward(
        &self,
        tape: &StepTape,
        seed: &StateSeed,
    ) -> Result<GradientBundle, EngineError> {
        let mut seeds = BTreeMap::new();
        seeds.insert(tape.steps(), seed.clone());
        self.backward_with(tape, &seeds)
    }

    /// Reverse sweep with cotangents injected at arbitrary recorded states;
    /// `seeds[t]` is added when the sweep reaches state t. A loss summed over
    /// several observation times seeds each of them once.
    pub fn backward_with(
        &self,
        tape: &StepTape,
        seeds: &BTreeMap<usize, StateSeed>,
    ) -> Result<GradientBundle, EngineError> {
        if tape.config_hash != self.config_digest() {
            return Err(EngineError::ConfigMismatch);
        }
        for t in 0..tape.steps() {
            let computed = tape.snapshots[t + 1].digest();
            if computed != tape.hashes[t] {
                return Err(EngineError::TapeHash { step: t, recorded: tape.hashes[t], computed });
            }
        }
        self.validate_seeds(tape, seeds)?;

        let cfg = &self.config;
        let t_total = tape.steps();

        // Where each emitted vehicle's existence weight routes: the feeding
        // lane and the charge interval of the credit that released it.
        let mut placements: BTreeMap<u64, (u64, EmissionCredit)> = BTreeMap::new();
        if cfg.emission_surrogate {
            for r in &tape.records {
                for (&lane, e) in &r.emissions {
                    if let (Some(v), Some(interval)) = (e.placed, e.placed_interval) {
                        placements.insert(v.id, (lane, interval));
                    }
                }
            }
        }

        // Cotangents on the state the sweep currently sits at (x_{t+1} when
        // processing step t).
        let final_snap = tape.final_state();
        let mut cells: BTreeMap<u64, Vec<Vec2>> = final_snap
            .macro_lanes
            .iter()
            .map(|(&id, l)| (id, vec![Vec2::ZERO; l.cells.len()]))
            .collect();
        let mut vehicles: BTreeMap<u64, Vec2> = final_snap
            .micro_lanes
            .values()
            .flat_map(|l| l.vehicles.iter())
            .map(|v| (v.id, Vec2::ZERO))
            .collect();
        // Cotangent on each coupled lane's aggregation-written inflow state,
        // deposited by the macro transpose and consumed one step earlier.
        let mut inflow_up: BTreeMap<u64, Vec2> = BTreeMap::new();
        let mut u_max: BTreeMap<u64, f64> =
            final_snap.macro_lanes.keys().map(|&id| (id, 0.0)).collect();
        let mut pace = vec![0.0; self.pace.as_ref().map_or(0, |p| p.accel.len())];
        let mut green = vec![0.0; self.signal.as_ref().map_or(0, |s| s.spec.green_we.len())];
        // Contributions onto post-step edge cells of earlier steps, applied
        // when the sweep reaches them (emission release speed, surrogate).
        let mut deferred_edge: BTreeMap<usize, BTreeMap<u64, Vec2>> = BTreeMap::new();

        apply_seed(&mut cells, &mut vehicles, seeds.get(&t_total));

        for t in (0..t_total).rev() {
            let snap = &tape.snapshots[t];
            let record = &tape.records[t];

            // Aggregation transpose: the inflow written at step t was
            // consumed by step t+1's macro update, whose transpose deposited
            // its cotangent here. Route it to the window members.
            let inflow_cot = std::mem::take(&mut inflow_up);
            for (&m2, ar) in &record.aggregations {
                let Some(&g_in) = inflow_cot.get(&m2) else { continue };
                let lane = &snap.macro_lanes[&m2];
                let agg = &ar.aggregate;
                let chain = inflow_state_adjoint(agg, g_in, lane.u_max, cfg.gamma);
                *u_max.get_mut(&m2).expect("macro lane") += chain.g_u_max;
                let adj = backward_through_aggregation(agg, &chain, ar.window_hi - ar.window_lo);
                for (i, id) in agg.member_ids.iter().enumerate() {
                    vehicles.get_mut(id).expect("window member alive post-step").1 +=
                        adj.dv_each;
                    if !cfg.emission_surrogate {
                        continue;
                    }
                    let dw = adj.dw[i];
                    let Some(&(f, interval)) = placements.get(id) else { continue };
                    if dw == 0.0 {
                        continue;
                    }
                    let u_max_f = tape.snapshots[0].macro_lanes[&f].u_max;
                    for s in interval.step_lo..=interval.step_hi {
                        let er = &tape.records[s].emissions[&f];
                        let w_s = tape.records[s].macro_records[&f].weight;
                        for (step, d_edge, d_umax) in backward_through_emission(
                            dw * w_s,
                            &[(s, er.edge_post)],
                            u_max_f,
                            cfg.gamma,
                            cfg.dt,
                            cfg.mean_vehicle_length,
                        ) {
                            *deferred_edge
                                .entry(step)
                                .or_default()
                                .entry(f)
                                .or_insert(Vec2::ZERO) += d_edge;
                            *u_max.get_mut(&f).expect("macro lane") += d_umax;
                        }
                    }
                }
            }

            // Micro transpose over the step's input set: the checkpointed
            // vehicles plus the one emitted that step, appended last.
            for (&c, mr) in &record.micro_records {
                let lane_snap = &snap.micro_lanes[&c];
                let n_orig = lane_snap.vehicles.len();
                let placed = self
                    .feeding_macro
                    .get(&c)
                    .and_then(|f| record.emissions[f].placed);
                let mut aug = lane_snap.vehicles.clone();
                if let Some(v) = placed {
                    aug.push(v);
                }
                let lane_aug = MicroLaneState {
                    vehicles: aug,
                    length: lane_snap.length,
                    lead_boundary: lane_snap.lead_boundary,
                };
                let jacs = micro_step_jacobians(
                    &lane_aug,
                    cfg.dt,
                    cfg.delta_exponent,
                    mr.pace,
                    &mr.clamped,
                );
                let lambda_out: Vec<Vec2> = lane_aug
                    .vehicles
                    .iter()
                    .map(|v| {
                        if mr.exited.iter().any(|&(id, _)| id == v.id) {
                            Vec2::ZERO
                        } else {
                            vehicles.get(&v.id).copied().unwrap_or(Vec2::ZERO)
                        }
                    })
                    .collect();
                let (lambda_in, pace_grad) = micro_step_adjoint(&jacs, &lambda_out);
                if mr.pace.is_some() && t < pace.len() {
                    pace[t] += pace_grad;
                }
                for (i, v) in lane_snap.vehicles.iter().enumerate() {
                    vehicles.insert(v.id, lambda_in[i]);
                }
                if let Some(pv) = placed {
                    vehicles.remove(&pv.id);
                    // The release speed came from the feeding lane's
                    // post-step edge; position zero is not a state.
                    let lam_v = lambda_in[n_orig].1;
                    let f = self.feeding_macro[&c];
                    let er = &record.emissions[&f];
                    let u_max_f = snap.macro_lanes[&f].u_max;
                    let (d_edge, d_umax) =
                        emission_velocity_partials(er.edge_post, u_max_f, cfg.gamma);
                    *deferred_edge.entry(t).or_default().entry(f).or_insert(Vec2::ZERO) +=
                        d_edge.scale(lam_v);
                    *u_max.get_mut(&f).expect("macro lane") += lam_v * d_umax;
                }
            }

            // Deferred contributions target post-step edge cells of step t,
            // which the macro transpose is about to consume.
            if let Some(extras) = deferred_edge.remove(&t) {
                for (f, g) in extras {
                    *cells
                        .get_mut(&f)
                        .expect("feeding lane")
                        .last_mut()
                        .expect("macro lane has cells") += g;
                }
            }

            // Macro transpose, with the interface cases replayed and checked.
            for (&m, mr) in &record.macro_records {
                let lane = &snap.macro_lanes[&m];
                let sols = interface_profile(lane, cfg.gamma);
                verify_cases(&sols, &mr.cases)
                    .map_err(|source| EngineError::Fvm { lane: m, source })?;
                let jac =
                    fvm_step_jacobians(lane, cfg.gamma, cfg.dt, mr.weight, &sols, &mr.clamps);
                let la = fvm_step_adjoint(&jac, &cells[&m]);
                cells.insert(m, la.cells);
                if self.agg_windows.contains_key(&m) {
                    inflow_up.insert(m, la.inflow_up);
                }
                *u_max.get_mut(&m).expect("macro lane") += la.du_max;
                if let Some(sig) = &self.signal {
                    let gated_we = sig.we.contains(&m);
                    if gated_we || sig.ns.contains(&m) {
                        let time = t as f64 * cfg.dt;
                        for (k, d_we, d_ns) in signal_weight_partials(&sig.spec, time, cfg.dt) {
                            green[k] += la.d_weight * if gated_we { d_we } else { d_ns };
                        }
                    }
                }
            }

            if let Some(cap) = cfg.grad_clip {
                for v in cells.values_mut() {
                    for c in v.iter_mut() {
                        *c = Vec2(c.0.clamp(-cap, cap), c.1.clamp(-cap, cap));
                    }
                }
                for l in vehicles.values_mut() {
                    *l = Vec2(l.0.clamp(-cap, cap), l.1.clamp(-cap, cap));
                }
            }

            apply_seed(&mut cells, &mut vehicles, seeds.get(&t));
        }

        let mut scalars = BTreeMap::new();
        if cfg.wants_u_max_gradient() {
            for (lane, g) in &u_max {
                scalars.insert(format!("u_max[{lane}]"), *g);
            }
        }
        Ok(GradientBundle { macro_cells: cells, vehicles, pace, green, scalars })
    }

    fn validate_seeds(
        &self,
        tape: &StepTape,
        seeds: &BTreeMap<usize, StateSeed>,
    ) -> Result<(), EngineError> {
        for (&t, seed) in seeds {
            if t > tape.steps() {
                return Err(EngineError::BadSeed(format!(
                    "seed at step {t} beyond tape length {}",
                    tape.steps()
                )));
            }
            let snap = &tape.snapshots[t];
            for (lane, sc) in &seed.macro_cells {
                match snap.macro_lanes.get(lane) {
                    None => {
                        return Err(EngineError::BadSeed(format!(
                            "seed names unknown macro lane {lane}"
                        )))
                    }
                    Some(l) if l.cells.len() != sc.len() => {
                        return Err(EngineError::BadSeed(format!(
                            "seed for lane {lane} has {} cells, state has {}",
                            sc.len(),
                            l.cells.len()
                        )))
                    }
                    _ => {}
                }
            }
            for id in seed.vehicles.keys() {
                let alive = snap
                    .micro_lanes
                    .values()
                    .any(|l| l.vehicles.iter().any(|v| v.id == *id));
                if !alive {
                    return Err(EngineError::BadSeed(format!(
                        "seed names vehicle {id}, not present at step {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn apply_seed(
    cells: &mut BTreeMap<u64, Vec<Vec2>>,
    vehicles: &mut BTreeMap<u64, Vec2>,
    seed: Option<&StateSeed>,
) {
    let Some(seed) = seed else { return };
    for (lane, sc) in &seed.macro_cells {
        let dst = cells.get_mut(lane).expect("validated seed lane");
        for (d, s) in dst.iter_mut().zip(sc) {
            *d += *s;
        }
    }
    for (id, s) in &seed.vehicles {
        *vehicles.get_mut(id).expect("validated seed vehicle") += *s;
    }
}
