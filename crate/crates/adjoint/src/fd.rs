//! Finite-difference oracle over the same input set the reverse sweep
//! reports. Every probe reruns the plain forward simulation on a perturbed
//! copy of the scenario, so the oracle shares no code path with the
//! analytical derivatives it checks.

use difftraffic_core::{LaneSpec, Scenario, Vec2};

use crate::bundle::GradientBundle;
use crate::network::{Engine, EngineError, NetworkState};

/// A copy of the scenario with `eps * dir` added to its differentiable
/// inputs: initial cells, initial vehicles (keyed by index), the pace and
/// green schedules, and `u_max[lane]` scalars.
pub fn perturbed_scenario(sc: &Scenario, dir: &GradientBundle, eps: f64) -> Scenario {
    let mut out = sc.clone();
    for (lane_id, dirs) in &dir.macro_cells {
        for lane in out.lanes.iter_mut() {
            if let LaneSpec::Macro { id, cells, .. } = lane {
                if id == lane_id {
                    for (c, d) in cells.iter_mut().zip(dirs) {
                        c.rho += eps * d.0;
                        c.y += eps * d.1;
                    }
                }
            }
        }
    }
    for (&id, d) in &dir.vehicles {
        let v = &mut out.vehicles[id as usize];
        v.p += eps * d.0;
        v.v += eps * d.1;
    }
    if let Some(controls) = &mut out.controls {
        if let Some(p) = &mut controls.pace_car {
            for (a, d) in p.accel.iter_mut().zip(&dir.pace) {
                *a += eps * d;
            }
        }
        if let Some(s) = &mut controls.signal {
            for (g, d) in s.green_we.iter_mut().zip(&dir.green) {
                *g += eps * d;
            }
        }
    }
    for (name, d) in &dir.scalars {
        let Some(lane_id) = name
            .strip_prefix("u_max[")
            .and_then(|r| r.strip_suffix(']'))
            .and_then(|r| r.parse::<u64>().ok())
        else {
            continue;
        };
        for lane in out.lanes.iter_mut() {
            if let LaneSpec::Macro { id, u_max, .. } = lane {
                if *id == lane_id {
                    *u_max += eps * d;
                }
            }
        }
    }
    out
}

fn run_loss(
    sc: &Scenario,
    steps: usize,
    loss: &dyn Fn(&NetworkState) -> f64,
) -> Result<f64, EngineError> {
    let (engine, mut state) = Engine::new(sc)?;
    engine.simulate(&mut state, steps)?;
    Ok(loss(&state))
}

/// Central difference of the loss along a direction bundle.
pub fn directional_derivative(
    sc: &Scenario,
    steps: usize,
    h: f64,
    dir: &GradientBundle,
    loss: &dyn Fn(&NetworkState) -> f64,
) -> Result<f64, EngineError> {
    let hi = run_loss(&perturbed_scenario(sc, dir, h), steps, loss)?;
    let lo = run_loss(&perturbed_scenario(sc, dir, -h), steps, loss)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Full central-difference gradient: two forward runs per input dimension.
pub fn finite_diff_gradient(
    sc: &Scenario,
    steps: usize,
    h: f64,
    loss: &dyn Fn(&NetworkState) -> f64,
) -> Result<GradientBundle, EngineError> {
    let template = zero_bundle(sc);
    let mut grad = template.clone();

    for (&lane, dirs) in &template.macro_cells {
        for i in 0..dirs.len() {
            for comp in 0..2 {
                let mut unit = template.clone();
                let cell = &mut unit.macro_cells.get_mut(&lane).unwrap()[i];
                *cell = if comp == 0 { Vec2(1.0, 0.0) } else { Vec2(0.0, 1.0) };
                let d = directional_derivative(sc, steps, h, &unit, loss)?;
                let dst = &mut grad.macro_cells.get_mut(&lane).unwrap()[i];
                if comp == 0 {
                    dst.0 = d;
                } else {
                    dst.1 = d;
                }
            }
        }
    }
    let ids: Vec<u64> = template.vehicles.keys().copied().collect();
    for id in ids {
        for comp in 0..2 {
            let mut unit = template.clone();
            *unit.vehicles.get_mut(&id).unwrap() =
                if comp == 0 { Vec2(1.0, 0.0) } else { Vec2(0.0, 1.0) };
            let d = directional_derivative(sc, steps, h, &unit, loss)?;
            let dst = grad.vehicles.get_mut(&id).unwrap();
            if comp == 0 {
                dst.0 = d;
            } else {
                dst.1 = d;
            }
        }
    }
    for i in 0..template.pace.len() {
        let mut unit = template.clone();
        unit.pace[i] = 1.0;
        grad.pace[i] = directional_derivative(sc, steps, h, &unit, loss)?;
    }
    for i in 0..template.green.len() {
        let mut unit = template.clone();
        unit.green[i] = 1.0;
        grad.green[i] = directional_derivative(sc, steps, h, &unit, loss)?;
    }
    let names: Vec<String> = template.scalars.keys().cloned().collect();
    for name in names {
        let mut unit = template.clone();
        unit.scalars.insert(name.clone(), 1.0);
        let d = directional_derivative(sc, steps, h, &unit, loss)?;
        grad.scalars.insert(name, d);
    }
    Ok(grad)
}

/// Zero bundle shaped like the scenario's differentiable inputs.
pub fn zero_bundle(sc: &Scenario) -> GradientBundle {
    let mut b = GradientBundle::default();
    for lane in &sc.lanes {
        if let LaneSpec::Macro { id, cells, .. } = lane {
            b.macro_cells.insert(*id, vec![Vec2::ZERO; cells.len()]);
        }
    }
    for i in 0..sc.vehicles.len() {
        b.vehicles.insert(i as u64, Vec2::ZERO);
    }
    if let Some(c) = &sc.controls {
        if let Some(p) = &c.pace_car {
            b.pace = vec![0.0; p.accel.len()];
        }
        if let Some(s) = &c.signal {
            b.green = vec![0.0; s.green_we.len()];
        }
    }
    if sc.config.wants_u_max_gradient() {
        for lane in &sc.lanes {
            if let LaneSpec::Macro { id, .. } = lane {
                b.scalars.insert(format!("u_max[{id}]"), 0.0);
            }
        }
    }
    b
}
