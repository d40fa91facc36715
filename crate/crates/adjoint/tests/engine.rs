//! End-to-end checks of the recorded forward run and the reverse sweep:
//! determinism, tape integrity, mass accounting, and agreement between the
//! analytical gradients and the finite-difference oracle on every input
//! family the engine differentiates.

use std::collections::BTreeMap;

use difftraffic_adjoint::{
    directional_derivative, finite_diff_gradient, perturbed_scenario, run_scenario, zero_bundle,
    Engine, EngineError, GradientBundle, NetworkState, StateSeed,
};
use difftraffic_arz::fvm_step;
use difftraffic_core::builders::{self, HybridChainParams};
use difftraffic_core::{
    ConversionMode, LaneSpec, LeadBoundary, Scenario, SolverConfig, Vec2, VehicleSpec,
};

fn assert_rel(name: &str, got: f64, want: f64, rel: f64, abs: f64) {
    let err = (got - want).abs();
    let tol = abs + rel * want.abs().max(got.abs());
    assert!(err <= tol, "{name}: got {got}, want {want}, err {err} > tol {tol}");
}

fn bundles_close(a: &GradientBundle, b: &GradientBundle, tol: f64) {
    let mut diff = a.clone();
    diff.add_scaled(b, -1.0);
    let scale = 1.0 + a.norm() + b.norm();
    assert!(diff.norm() <= tol * scale, "bundles differ by {} at scale {scale}", diff.norm());
}

#[test]
fn empty_tape_backward_returns_the_seed() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, tape) = run_scenario(&sc, 0).unwrap();
    assert_eq!(tape.steps(), 0);
    assert_eq!(tape.snapshots.len(), 1);

    let n = tape.final_state().macro_lanes[&0].cells.len();
    let mut seed = StateSeed::default();
    seed.macro_cells.insert(0, (0..n).map(|i| Vec2(0.3 + i as f64, -0.2)).collect());
    seed.vehicles.insert(1, Vec2(1.5, 2.5));

    let g = engine.backward(&tape, &seed).unwrap();
    assert_eq!(g.macro_cells[&0], seed.macro_cells[&0]);
    assert!(g.macro_cells[&2].iter().all(|c| *c == Vec2::ZERO));
    assert_eq!(g.vehicles[&1], Vec2(1.5, 2.5));
    assert_eq!(g.vehicles[&0], Vec2::ZERO);
    assert!(g.pace.is_empty());
    assert!(g.green.is_empty());
    assert!(g.scalars.is_empty());
}

#[test]
fn engine_step_reduces_to_the_finite_volume_update_on_a_lone_macro_lane() {
    let sc = builders::macro_lane_scenario(12);
    let (engine, state0) = Engine::new(&sc).unwrap();

    let mut by_engine = state0.clone();
    engine.simulate(&mut by_engine, 20).unwrap();

    let mut lane = state0.macro_lanes[&0].clone();
    for _ in 0..20 {
        lane.cells = fvm_step(&lane, sc.config.gamma, sc.config.dt, 1.0).unwrap().cells;
    }
    for (a, b) in by_engine.macro_lanes[&0].cells.iter().zip(&lane.cells) {
        assert_eq!(a.rho.to_bits(), b.rho.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
    }
}

#[test]
fn macro_gradient_matches_finite_differences_including_the_speed_limit() {
    let mut sc = builders::macro_lane_scenario(8);
    sc.config.grad_params = vec!["u_max".into()];
    let steps = 30;
    let weights: Vec<Vec2> = (0..8)
        .map(|i| Vec2((i as f64 + 1.0).sin(), 0.5 * (2.0 * i as f64 + 1.0).cos()))
        .collect();
    let loss = {
        let weights = weights.clone();
        move |state: &NetworkState| {
            let lane = &state.macro_lanes[&0];
            lane.cells.iter().zip(&weights).map(|(c, w)| c.rho * w.0 + c.y * w.1).sum()
        }
    };

    let (engine, tape) = run_scenario(&sc, steps).unwrap();
    let base_sig = tape.event_signature();
    let mut seed = StateSeed::default();
    seed.macro_cells.insert(0, weights.clone());
    let adj = engine.backward(&tape, &seed).unwrap();

    // One probe per input dimension, skipping the dimensions whose probes
    // flip a discrete event: central differences across a kink do not measure
    // the one-sided derivative the reverse sweep computes.
    let h = 1e-6;
    let mut dims: Vec<(GradientBundle, f64, String)> = Vec::new();
    for i in 0..8 {
        for comp in 0..2 {
            let mut unit = zero_bundle(&sc);
            unit.macro_cells.get_mut(&0).unwrap()[i] =
                if comp == 0 { Vec2(1.0, 0.0) } else { Vec2(0.0, 1.0) };
            let a = adj.macro_cells[&0][i];
            let want = if comp == 0 { a.0 } else { a.1 };
            dims.push((unit, want, format!("d {}[{i}]", if comp == 0 { "rho" } else { "y" })));
        }
    }
    let mut u_unit = zero_bundle(&sc);
    u_unit.scalars.insert("u_max[0]".into(), 1.0);
    dims.push((u_unit, adj.scalars["u_max[0]"], "d u_max".into()));

    let mut checked = 0;
    for (unit, want, name) in &dims {
        let on_piece = [h, -h].iter().all(|&e| {
            run_scenario(&perturbed_scenario(&sc, unit, e), steps)
                .map(|(_, t)| t.event_signature() == base_sig)
                .unwrap_or(false)
        });
        if !on_piece {
            continue;
        }
        let fd = directional_derivative(&sc, steps, h, unit, &loss).unwrap();
        assert_rel(name, *want, fd, 1e-4, 1e-8);
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} of {} inputs stayed on one smooth piece", dims.len());
    assert!(adj.macro_cells[&0].iter().any(|c| c.0.abs() > 1e-3));
}

#[test]
fn finite_difference_error_dips_at_the_optimal_probe_size() {
    let sc = builders::micro_platoon_scenario(6, 11.0, builders::nominal_idm());
    let steps = 50;
    let loss =
        |state: &NetworkState| state.micro_lanes[&0].vehicles.iter().map(|v| v.p.sin()).sum::<f64>();

    let (engine, tape) = run_scenario(&sc, steps).unwrap();
    let mut seed = StateSeed::default();
    for v in &tape.final_state().micro_lanes[&0].vehicles {
        seed.vehicles.insert(v.id, Vec2(v.p.cos(), 0.0));
    }
    let adj = engine.backward(&tape, &seed).unwrap();

    let mut dir = zero_bundle(&sc);
    for d in dir.vehicles.values_mut() {
        *d = Vec2(0.7, 0.3);
    }
    let truth = adj.dot(&dir);

    let err_at =
        |h: f64| (directional_derivative(&sc, steps, h, &dir, &loss).unwrap() - truth).abs();
    let (coarse, sweet, tiny) = (err_at(1e-2), err_at(1e-5), err_at(1e-9));
    assert!(sweet <= 1e-7 * truth.abs().max(1.0), "error {sweet} at the sweet spot, truth {truth}");
    assert!(sweet < coarse, "truncation should dominate at h = 1e-2: {sweet} !< {coarse}");
    assert!(sweet < tiny, "roundoff should dominate at h = 1e-9: {sweet} !< {tiny}");
}

#[test]
fn recorded_runs_are_deterministic_and_replayable() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, t1) = run_scenario(&sc, 60).unwrap();
    let (_, t2) = run_scenario(&sc, 60).unwrap();
    assert_eq!(t1.final_hash(), t2.final_hash());
    assert_eq!(t1.event_signature(), t2.event_signature());
    t1.verify_replay(&engine).unwrap();
}

#[test]
fn tampering_with_a_checkpoint_is_detected() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, tape) = run_scenario(&sc, 20).unwrap();

    let mut tampered = tape.clone();
    tampered.snapshots[3].macro_lanes.get_mut(&0).unwrap().cells[2].rho += 1e-6;
    let replay = tampered.verify_replay(&engine).unwrap_err();
    assert!(matches!(replay, EngineError::ReplayDiverged { step: 3, .. }), "{replay}");
    let back = engine.backward(&tampered, &StateSeed::default()).unwrap_err();
    assert!(matches!(back, EngineError::TapeHash { step: 2, .. }), "{back}");
}

#[test]
fn hybrid_run_emits_vehicles_and_keeps_the_mass_ledger_tight() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, tape) = run_scenario(&sc, 100).unwrap();

    let placed = tape.records.iter().filter(|r| r.emissions[&0].placed.is_some()).count();
    assert!(placed >= 2, "expected at least two emissions in 100 steps, got {placed}");
    assert_eq!(tape.final_state().next_vehicle_id, 4 + placed as u64);

    let audit = engine.mass_audit(&tape);
    assert!(audit.balance.abs() < 1.0, "mass ledger drift: {audit:?}");
}

#[test]
fn backward_is_linear_in_the_seed() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, tape) = run_scenario(&sc, 30).unwrap();
    let last = tape.final_state();

    let fill = |phase: f64| {
        let mut seed = StateSeed::default();
        for (&id, lane) in &last.macro_lanes {
            let cells = (0..lane.cells.len())
                .map(|i| {
                    let x = i as f64 + phase + id as f64;
                    Vec2(x.sin(), (1.7 * x).cos())
                })
                .collect();
            seed.macro_cells.insert(id, cells);
        }
        for lane in last.micro_lanes.values() {
            for v in &lane.vehicles {
                let x = v.id as f64 * 0.9 + phase;
                seed.vehicles.insert(v.id, Vec2(x.cos(), x.sin()));
            }
        }
        seed
    };
    let (a, b) = (fill(0.0), fill(2.3));
    let mut c = StateSeed::default();
    for (id, cells) in &a.macro_cells {
        let mixed =
            cells.iter().zip(&b.macro_cells[id]).map(|(x, y)| x.scale(0.7) + y.scale(-1.3));
        c.macro_cells.insert(*id, mixed.collect());
    }
    for (id, v) in &a.vehicles {
        c.vehicles.insert(*id, v.scale(0.7) + b.vehicles[id].scale(-1.3));
    }

    let ga = engine.backward(&tape, &a).unwrap();
    let gb = engine.backward(&tape, &b).unwrap();
    let gc = engine.backward(&tape, &c).unwrap();
    let mut expect = GradientBundle::default();
    expect.add_scaled(&ga, 0.7);
    expect.add_scaled(&gb, -1.3);
    bundles_close(&gc, &expect, 1e-11);
}

#[test]
fn hybrid_directional_derivatives_match_finite_differences() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let steps = 100;
    let loss = |state: &NetworkState| {
        let mut acc = 0.0;
        for (&id, lane) in &state.macro_lanes {
            let (a, b) = if id == 0 { (0.3, 0.05) } else { (1.0, 0.1) };
            acc += lane.cells.iter().map(|c| a * c.rho + b * c.y).sum::<f64>();
        }
        for lane in state.micro_lanes.values() {
            acc += lane.vehicles.iter().map(|v| 0.1 * v.v).sum::<f64>();
        }
        acc
    };

    let (engine, tape) = run_scenario(&sc, steps).unwrap();
    let base_sig = tape.event_signature();
    let mut seed = StateSeed::default();
    for (&id, lane) in &tape.final_state().macro_lanes {
        let (a, b) = if id == 0 { (0.3, 0.05) } else { (1.0, 0.1) };
        seed.macro_cells.insert(id, vec![Vec2(a, b); lane.cells.len()]);
    }
    for lane in tape.final_state().micro_lanes.values() {
        for v in &lane.vehicles {
            seed.vehicles.insert(v.id, Vec2(0.0, 0.1));
        }
    }
    let adj = engine.backward(&tape, &seed).unwrap();

    let h = 1e-5;
    let mut dirs = Vec::new();
    let mut d1 = zero_bundle(&sc);
    for (i, c) in d1.macro_cells.get_mut(&0).unwrap().iter_mut().enumerate() {
        *c = Vec2((i as f64 + 0.5).sin(), 0.1 * (i as f64).cos());
    }
    dirs.push(d1);
    let mut d2 = zero_bundle(&sc);
    for d in d2.vehicles.values_mut() {
        *d = Vec2(0.6, 0.8);
    }
    dirs.push(d2);
    let mut d3 = zero_bundle(&sc);
    for (i, c) in d3.macro_cells.get_mut(&2).unwrap().iter_mut().enumerate() {
        *c = Vec2(0.5 * ((i % 3) as f64 - 1.0), 0.2);
    }
    for (id, d) in d3.vehicles.iter_mut() {
        *d = Vec2(0.2 * (*id as f64 + 1.0), -0.3);
    }
    dirs.push(d3);

    let mut checked = 0;
    for (k, dir) in dirs.iter().enumerate() {
        let stays_smooth = [h, -h].iter().all(|&e| {
            run_scenario(&perturbed_scenario(&sc, dir, e), steps)
                .map(|(_, t)| t.event_signature() == base_sig)
                .unwrap_or(false)
        });
        if !stays_smooth {
            continue;
        }
        let fd = directional_derivative(&sc, steps, h, dir, &loss).unwrap();
        assert_rel(&format!("direction {k}"), fd, adj.dot(dir), 2e-3, 1e-7);
        checked += 1;
    }
    assert!(checked >= 2, "only {checked} of 3 directions stayed on one smooth piece");
}

#[test]
fn tape_memory_grows_linearly_with_run_length() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (_, short) = run_scenario(&sc, 40).unwrap();
    let (_, long) = run_scenario(&sc, 80).unwrap();
    let ratio = long.memory_bytes() as f64 / short.memory_bytes() as f64;
    assert!((1.6..=2.4).contains(&ratio), "doubling the run scaled memory by {ratio}");
}

#[test]
fn stochastic_conversion_is_reproducible_and_advances_the_accumulator() {
    let mut sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    sc.config.conversion_mode = ConversionMode::Stochastic;
    sc.config.rng_seed = 11;
    let steps = 200;
    let (engine, t1) = run_scenario(&sc, steps).unwrap();
    let (_, t2) = run_scenario(&sc, steps).unwrap();
    assert_eq!(t1.final_hash(), t2.final_hash());
    t1.verify_replay(&engine).unwrap();

    assert!(t1.records.iter().all(|r| r.emissions[&0].drawn.is_some()));
    let acc = t1.final_state().capacitors[&0].state.acc;
    assert!(acc > 0.5, "interval accumulator should advance in stochastic mode, acc = {acc}");
    let emitted = t1.final_state().next_vehicle_id - 4;
    assert!(emitted >= 1, "seeded draw stream placed no vehicles in {steps} steps");
}

#[test]
fn pace_schedule_gradient_matches_finite_differences() {
    let sc = builders::pace_scenario(3, 10.0, 40);
    let steps = 40;
    let loss = |state: &NetworkState| {
        state.micro_lanes[&0]
            .vehicles
            .iter()
            .map(|v| (0.3 * v.id as f64 + 1.0) * v.p.sin() + 0.1 * v.v)
            .sum::<f64>()
    };
    let (engine, tape) = run_scenario(&sc, steps).unwrap();
    let mut seed = StateSeed::default();
    for v in &tape.final_state().micro_lanes[&0].vehicles {
        seed.vehicles.insert(v.id, Vec2((0.3 * v.id as f64 + 1.0) * v.p.cos(), 0.1));
    }
    let adj = engine.backward(&tape, &seed).unwrap();
    assert_eq!(adj.pace.len(), 40);

    let fd = finite_diff_gradient(&sc, steps, 1e-6, &loss).unwrap();
    for t in 0..40 {
        assert_rel(&format!("d accel[{t}]"), adj.pace[t], fd.pace[t], 1e-4, 1e-8);
    }
    assert!(adj.pace.iter().all(|g| g.abs() > 1e-12), "every schedule entry feeds the loss");
}

#[test]
fn green_schedule_gradient_matches_finite_differences() {
    let sc = builders::signal_toy_scenario(0.35, 0.3, vec![9.0, 8.0, 7.0]);
    let steps = 450;
    let loss =
        |state: &NetworkState| state.macro_lanes[&0].cells.iter().map(|c| c.rho).sum::<f64>();

    let (engine, tape) = run_scenario(&sc, steps).unwrap();
    let mut seed = StateSeed::default();
    seed.macro_cells.insert(0, vec![Vec2(1.0, 0.0); 6]);
    let adj = engine.backward(&tape, &seed).unwrap();
    assert_eq!(adj.green.len(), 3);

    let fd = finite_diff_gradient(&sc, steps, 1e-5, &loss).unwrap();
    for k in 0..3 {
        assert_rel(&format!("d green[{k}]"), adj.green[k], fd.green[k], 1e-3, 1e-7);
        assert!(adj.green[k].abs() > 1e-6, "green[{k}] gradient should be live: {}", adj.green[k]);
    }
}

#[test]
fn seeds_at_interior_steps_compose_additively() {
    let sc = builders::macro_lane_scenario(6);
    let (engine, tape) = run_scenario(&sc, 20).unwrap();
    let cells = |phase: f64| -> Vec<Vec2> {
        (0..6).map(|i| Vec2((i as f64 + phase).sin(), (i as f64 - phase).cos())).collect()
    };
    let mut mid = StateSeed::default();
    mid.macro_cells.insert(0, cells(0.4));
    let mut end = StateSeed::default();
    end.macro_cells.insert(0, cells(1.9));

    let both = BTreeMap::from([(10, mid.clone()), (20, end.clone())]);
    let g_both = engine.backward_with(&tape, &both).unwrap();

    let g_mid = engine.backward_with(&tape, &BTreeMap::from([(10, mid)])).unwrap();
    let g_end = engine.backward(&tape, &end).unwrap();
    let mut expect = GradientBundle::default();
    expect.add_scaled(&g_mid, 1.0);
    expect.add_scaled(&g_end, 1.0);
    bundles_close(&g_both, &expect, 1e-11);
}

#[test]
fn malformed_seeds_are_rejected() {
    let sc = builders::hybrid_chain_scenario(&HybridChainParams::default());
    let (engine, tape) = run_scenario(&sc, 10).unwrap();

    let late = BTreeMap::from([(11, StateSeed::default())]);
    assert!(matches!(engine.backward_with(&tape, &late).unwrap_err(), EngineError::BadSeed(_)));

    let mut unknown_lane = StateSeed::default();
    unknown_lane.macro_cells.insert(9, vec![Vec2::ZERO]);
    assert!(matches!(engine.backward(&tape, &unknown_lane).unwrap_err(), EngineError::BadSeed(_)));

    let mut short_lane = StateSeed::default();
    short_lane.macro_cells.insert(0, vec![Vec2::ZERO; 3]);
    assert!(matches!(engine.backward(&tape, &short_lane).unwrap_err(), EngineError::BadSeed(_)));

    let mut ghost = StateSeed::default();
    ghost.vehicles.insert(999, Vec2(1.0, 0.0));
    assert!(matches!(engine.backward(&tape, &ghost).unwrap_err(), EngineError::BadSeed(_)));
}

#[test]
fn tapes_from_a_different_configuration_are_rejected() {
    let sc = builders::macro_lane_scenario(6);
    let (_, tape) = run_scenario(&sc, 5).unwrap();
    let mut other = sc.clone();
    other.config.dt = 0.05;
    let (engine2, _) = Engine::new(&other).unwrap();
    assert!(matches!(
        engine2.backward(&tape, &StateSeed::default()).unwrap_err(),
        EngineError::ConfigMismatch
    ));
}

#[test]
fn a_collision_aborts_with_the_partial_tape_attached() {
    let params = builders::nominal_idm();
    let sc = Scenario {
        config: SolverConfig::default(),
        lanes: vec![LaneSpec::Micro {
            id: 0,
            length: 500.0,
            lead_boundary: LeadBoundary::Free,
            idm_ranges: None,
        }],
        links: vec![],
        vehicles: vec![
            VehicleSpec { lane: 0, p: 110.0, v: 0.0, params },
            VehicleSpec { lane: 0, p: 100.0, v: 60.0, params },
        ],
        controls: None,
    };
    let (engine, state) = Engine::new(&sc).unwrap();
    let abort = engine.simulate_and_record(&state, 50).unwrap_err();
    assert_eq!(abort.step, 1);
    assert!(matches!(abort.source, EngineError::Micro { lane: 0, .. }));
    assert_eq!(abort.tape.steps(), 1);
    assert_eq!(abort.tape.snapshots.len(), 2);
    abort.tape.verify_replay(&engine).unwrap();
}
