//! Scenario validation. Returns the full list of violations rather than
//! failing fast, so a CLI user sees every problem at once. An empty list
//! means the scenario can be stepped at least once without arithmetic error:
//! in particular the initial state satisfies the CFL bound and all vehicle
//! gaps are positive.

use std::collections::BTreeMap;
use std::fmt;

use crate::scenario::{LaneSpec, Scenario};
use crate::state::{pow_g, velocity_from_state, BoundaryCondition, CellState, IdmParams};
use crate::topology::{topological_order, Link};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// What the message is about, e.g. "lane 3" or "config".
    pub entity: String,
    pub message: String,
}

impl Violation {
    fn new(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { entity: entity.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

/// Largest characteristic speed of a cell, max(|u|, |u - u_max gamma rho^gamma|).
pub fn max_wave_speed(q: CellState, u_max: f64, gamma: f64) -> f64 {
    let u = velocity_from_state(q, u_max, gamma).u;
    let lambda1 = u - u_max * gamma * pow_g(q.rho.max(0.0), gamma);
    u.abs().max(lambda1.abs())
}

pub fn validate_scenario(sc: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let cfg = &sc.config;

    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        out.push(Violation::new("config", format!("dt must be positive, got {}", cfg.dt)));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        out.push(Violation::new("config", format!("gamma out of (0,1): {}", cfg.gamma)));
    }
    if !(cfg.delta_exponent.is_finite() && cfg.delta_exponent > 0.0) {
        out.push(Violation::new(
            "config",
            format!("delta_exponent must be positive, got {}", cfg.delta_exponent),
        ));
    }
    if !(cfg.mean_vehicle_length.is_finite() && cfg.mean_vehicle_length > 0.0) {
        out.push(Violation::new(
            "config",
            format!("mean_vehicle_length must be positive, got {}", cfg.mean_vehicle_length),
        ));
    }
    if let Some(c) = cfg.grad_clip {
        if !(c.is_finite() && c > 0.0) {
            out.push(Violation::new("config", format!("grad_clip must be positive, got {c}")));
        }
    }
    for p in &cfg.grad_params {
        if p != "u_max" {
            out.push(Violation::new("config", format!("unknown grad_params entry \"{p}\"")));
        }
    }

    // Lane ids and per-lane checks.
    let mut kinds: BTreeMap<u64, bool> = BTreeMap::new(); // id -> is_macro
    for lane in &sc.lanes {
        let id = lane.id();
        if kinds.insert(id, lane.is_macro()).is_some() {
            out.push(Violation::new(format!("lane {id}"), "duplicate lane id"));
            continue;
        }
        match lane {
            LaneSpec::Macro { id, dx, u_max, cells, upstream_boundary, downstream_boundary } => {
                validate_macro_lane(
                    *id, *dx, *u_max, cells, upstream_boundary, downstream_boundary, cfg, &mut out,
                );
            }
            LaneSpec::Micro { id, length, lead_boundary, .. } => {
                if !(length.is_finite() && *length > 0.0) {
                    out.push(Violation::new(
                        format!("lane {id}"),
                        format!("micro lane length must be positive, got {length}"),
                    ));
                }
                if let crate::state::LeadBoundary::VirtualLeader { p, v } = lead_boundary {
                    if !p.is_finite() || !v.is_finite() || *v < 0.0 {
                        out.push(Violation::new(
                            format!("lane {id}"),
                            "virtual leader must have finite position and non-negative speed",
                        ));
                    }
                }
            }
        }
    }

    // Vehicles: lane membership, bounds, ordering, gaps, parameters.
    for lane in &sc.lanes {
        if let LaneSpec::Micro { id, length, lead_boundary, .. } = lane {
            let vehicles: Vec<_> = sc.vehicles_on(*id).collect();
            for (i, v) in vehicles.iter().enumerate() {
                let entity = format!("lane {id} vehicle {i}");
                if !(v.p.is_finite() && v.p >= 0.0 && v.p <= *length) {
                    out.push(Violation::new(&entity, format!("position {} outside [0, {length}]", v.p)));
                }
                if !(v.v.is_finite() && v.v >= 0.0) {
                    out.push(Violation::new(&entity, format!("velocity {} must be non-negative", v.v)));
                }
                validate_idm_params(&entity, &v.params, &mut out);
            }
            for pair in vehicles.windows(2) {
                let gap = pair[0].p - pair[1].p - pair[0].params.length;
                if !(gap > 0.0) {
                    out.push(Violation::new(
                        format!("lane {id}"),
                        format!(
                            "vehicles must be listed downstream-first with positive gaps; found gap {gap}"
                        ),
                    ));
                    break;
                }
            }
            if let (crate::state::LeadBoundary::VirtualLeader { p, .. }, Some(first)) =
                (lead_boundary, vehicles.first())
            {
                if *p <= first.p {
                    out.push(Violation::new(
                        format!("lane {id}"),
                        "virtual leader must sit ahead of the first vehicle",
                    ));
                }
            }
        }
    }
    for (i, v) in sc.vehicles.iter().enumerate() {
        match kinds.get(&v.lane) {
            None => out.push(Violation::new(
                format!("vehicle {i}"),
                format!("references unknown lane {}", v.lane),
            )),
            Some(true) => out.push(Violation::new(
                format!("vehicle {i}"),
                format!("placed on macro lane {}", v.lane),
            )),
            Some(false) => {}
        }
    }

    validate_links(sc, &kinds, &mut out);
    validate_controls(sc, &kinds, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn validate_macro_lane(
    id: u64,
    dx: f64,
    u_max: f64,
    cells: &[CellState],
    upstream: &BoundaryCondition,
    downstream: &BoundaryCondition,
    cfg: &crate::config::SolverConfig,
    out: &mut Vec<Violation>,
) {
    let entity = format!("lane {id}");
    if !(dx.is_finite() && dx > 0.0) {
        out.push(Violation::new(&entity, format!("dx must be positive, got {dx}")));
    }
    if !(u_max.is_finite() && u_max > 0.0) {
        out.push(Violation::new(&entity, format!("u_max must be positive, got {u_max}")));
        return;
    }
    if cells.is_empty() {
        out.push(Violation::new(&entity, "macro lane has no cells"));
    }
    let tol = 1e-9 * u_max.max(1.0);
    let check_state = |what: &str, q: CellState, out: &mut Vec<Violation>| {
        if !q.rho.is_finite() || !q.y.is_finite() {
            out.push(Violation::new(&entity, format!("{what} has non-finite components")));
            return;
        }
        if !(0.0..=1.0).contains(&q.rho) {
            out.push(Violation::new(&entity, format!("{what} density {} outside [0,1]", q.rho)));
            return;
        }
        let u = velocity_from_state(q, u_max, cfg.gamma).u;
        if u < -tol || u > u_max + tol {
            out.push(Violation::new(
                &entity,
                format!("{what} velocity {u} outside [0, u_max = {u_max}]"),
            ));
        }
    };
    for (i, &q) in cells.iter().enumerate() {
        check_state(&format!("cell {i}"), q, out);
    }
    for (side, bc) in [("upstream", upstream), ("downstream", downstream)] {
        if let BoundaryCondition::Inflow { q } = bc {
            check_state(&format!("{side} inflow state"), *q, out);
        }
    }

    // CFL on the initial state, including prescribed inflow states.
    if cfg.dt > 0.0 && dx > 0.0 && cfg.gamma > 0.0 && cfg.gamma < 1.0 {
        let mut max_l: f64 = 0.0;
        for &q in cells {
            max_l = max_l.max(max_wave_speed(q, u_max, cfg.gamma));
        }
        for bc in [upstream, downstream] {
            if let BoundaryCondition::Inflow { q } = bc {
                max_l = max_l.max(max_wave_speed(*q, u_max, cfg.gamma));
            }
        }
        if cfg.dt * max_l > dx {
            out.push(Violation::new(
                &entity,
                format!(
                    "CFL violation on lane {id}: dt*max|lambda| = {:.6} exceeds dx = {dx}",
                    cfg.dt * max_l
                ),
            ));
        }
    }
}

fn validate_idm_params(entity: &str, p: &IdmParams, out: &mut Vec<Violation>) {
    for (name, v) in [
        ("s_min", p.s_min),
        ("t_pref", p.t_pref),
        ("a_max", p.a_max),
        ("a_pref", p.a_pref),
        ("v_targ", p.v_targ),
        ("length", p.length),
    ] {
        if !(v.is_finite() && v > 0.0) {
            out.push(Violation::new(entity, format!("{name} must be positive, got {v}")));
        }
    }
}

fn validate_links(sc: &Scenario, kinds: &BTreeMap<u64, bool>, out: &mut Vec<Violation>) {
    let mut outgoing: BTreeMap<u64, usize> = BTreeMap::new();
    let mut incoming: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, Link { from, to }) in sc.links.iter().enumerate() {
        let entity = format!("link {i}");
        match (kinds.get(from), kinds.get(to)) {
            (None, _) => {
                out.push(Violation::new(&entity, format!("references unknown lane {from}")));
                continue;
            }
            (_, None) => {
                out.push(Violation::new(&entity, format!("references unknown lane {to}")));
                continue;
            }
            (Some(a), Some(b)) if a == b => {
                out.push(Violation::new(
                    &entity,
                    "links must join a macro lane to a micro lane or vice versa",
                ));
                continue;
            }
            _ => {}
        }
        *outgoing.entry(*from).or_default() += 1;
        *incoming.entry(*to).or_default() += 1;
        let feeds_micro = kinds.get(from) == Some(&true);
        if feeds_micro && matches!(sc.lane(*to), Some(LaneSpec::Micro { idm_ranges: None, .. })) {
            out.push(Violation::new(
                format!("lane {to}"),
                "receives emitted vehicles but defines no idm_ranges",
            ));
        }
    }
    for (lane, n) in outgoing {
        if n > 1 {
            out.push(Violation::new(format!("lane {lane}"), format!("{n} outgoing links; at most one supported")));
        }
    }
    for (lane, n) in incoming {
        if n > 1 {
            out.push(Violation::new(format!("lane {lane}"), format!("{n} incoming links; at most one supported")));
        }
    }
    let ids: Vec<u64> = sc.lanes.iter().map(|l| l.id()).collect();
    if topological_order(&ids, &sc.links).is_none() {
        out.push(Violation::new("links", "lane graph contains a cycle"));
    }
}

fn validate_controls(sc: &Scenario, kinds: &BTreeMap<u64, bool>, out: &mut Vec<Violation>) {
    let Some(controls) = &sc.controls else { return };
    if let Some(pace) = &controls.pace_car {
        let entity = "controls.pace_car";
        match kinds.get(&pace.lane) {
            Some(false) => {
                if sc.vehicles_on(pace.lane).next().is_none() {
                    out.push(Violation::new(entity, format!("lane {} has no vehicle to pace", pace.lane)));
                }
            }
            _ => out.push(Violation::new(entity, format!("lane {} is not a micro lane", pace.lane))),
        }
        if !(pace.bound.is_finite() && pace.bound > 0.0) {
            out.push(Violation::new(entity, format!("bound must be positive, got {}", pace.bound)));
        }
        if pace.accel.iter().any(|a| !a.is_finite()) {
            out.push(Violation::new(entity, "acceleration schedule has non-finite entries"));
        }
    }
    if let Some(sig) = &controls.signal {
        let entity = "controls.signal";
        for lane in sig.we_lanes.iter().chain(&sig.ns_lanes) {
            if kinds.get(lane) != Some(&true) {
                out.push(Violation::new(entity, format!("lane {lane} is not a macro lane")));
            }
        }
        if sig.we_lanes.iter().any(|l| sig.ns_lanes.contains(l)) {
            out.push(Violation::new(entity, "a lane appears in both approaches"));
        }
        if !(sig.phase_length.is_finite() && sig.phase_length > 0.0) {
            out.push(Violation::new(entity, format!("phase_length must be positive, got {}", sig.phase_length)));
        }
        if !(sig.min_green >= 0.0 && 2.0 * sig.min_green <= sig.phase_length) {
            out.push(Violation::new(entity, "min_green must satisfy 0 <= 2*min_green <= phase_length"));
        }
        if sig.green_we.is_empty() {
            out.push(Violation::new(entity, "green_we must list at least one phase"));
        }
        for (k, g) in sig.green_we.iter().enumerate() {
            if !(*g >= sig.min_green && *g <= sig.phase_length - sig.min_green) {
                out.push(Violation::new(
                    entity,
                    format!("phase {k} green {g} outside [min_green, phase_length - min_green]"),
                ));
            }
        }
    }
}
