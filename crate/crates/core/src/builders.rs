//! Programmatic scenario construction. The CLI bench families, the test
//! suites, and the bundled example scenarios are all built from these, so a
//! geometry fix lands everywhere at once.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SolverConfig;
use crate::scenario::{ControlsSpec, IdmRanges, LaneSpec, PaceSpec, Scenario, SignalSpec, VehicleSpec};
use crate::state::{u_eq, BoundaryCondition, CellState, IdmParams, LeadBoundary};
use crate::topology::Link;

pub fn nominal_idm() -> IdmParams {
    IdmParams { s_min: 2.0, t_pref: 1.2, a_max: 1.5, a_pref: 2.0, v_targ: 14.0, length: 5.0 }
}

/// Bumper-to-bumper gap at which a follower moving at `v` behind a leader at
/// the same speed has zero acceleration: (s_min + v T) / sqrt(1 - (v/v_targ)^delta).
pub fn equilibrium_gap(p: IdmParams, v: f64, delta: f64) -> f64 {
    let s0 = p.s_min + v * p.t_pref;
    s0 / (1.0 - (v / p.v_targ).powf(delta)).sqrt()
}

/// Admissible cell with density `rho` and velocity `frac * u_eq(rho)`,
/// capped at u_max.
pub fn cell_at(rho: f64, frac: f64, u_max: f64, gamma: f64) -> CellState {
    let u = (frac * u_eq(rho, u_max, gamma)).clamp(0.0, u_max);
    CellState::from_velocity(rho, u, u_max, gamma)
}

/// Smooth density wave, velocity riding a fraction of equilibrium. With
/// `u <= u_eq` everywhere, shock intermediate densities stay at or below jam,
/// so runs built from this never trip the density clamp.
pub fn wave_cells(n: usize, rho_base: f64, rho_amp: f64, frac: f64, u_max: f64, gamma: f64) -> Vec<CellState> {
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            let rho = rho_base + rho_amp * (2.0 * std::f64::consts::PI * x).sin();
            cell_at(rho, frac, u_max, gamma)
        })
        .collect()
}

/// Independent uniformly-random admissible cells; velocities span
/// `frac_range` of equilibrium (values above 1 are capped at u_max).
pub fn random_cells(
    n: usize,
    rho_range: (f64, f64),
    frac_range: (f64, f64),
    u_max: f64,
    gamma: f64,
    rng: &mut impl Rng,
) -> Vec<CellState> {
    (0..n)
        .map(|_| {
            let rho = rng.gen_range(rho_range.0..=rho_range.1);
            let frac = rng.gen_range(frac_range.0..=frac_range.1);
            cell_at(rho, frac, u_max, gamma)
        })
        .collect()
}

/// One macro cell fed by a matching inflow; the smallest scenario that steps.
pub fn single_cell_scenario() -> Scenario {
    let (u_max, gamma) = (16.0, 0.5);
    let q = cell_at(0.3, 0.9, u_max, gamma);
    Scenario {
        config: SolverConfig { dt: 0.1, gamma, ..SolverConfig::default() },
        lanes: vec![LaneSpec::Macro {
            id: 0,
            dx: 20.0,
            u_max,
            cells: vec![q],
            upstream_boundary: BoundaryCondition::Inflow { q },
            downstream_boundary: BoundaryCondition::Outflow,
        }],
        links: vec![],
        vehicles: vec![],
        controls: None,
    }
}

/// Open macro lane with a smooth initial wave; the workhorse for estimation
/// and gradient checks.
pub fn macro_lane_scenario(n_cells: usize) -> Scenario {
    let (u_max, gamma) = (16.0, 0.5);
    Scenario {
        config: SolverConfig { dt: 0.1, gamma, ..SolverConfig::default() },
        lanes: vec![LaneSpec::Macro {
            id: 0,
            dx: 20.0,
            u_max,
            cells: wave_cells(n_cells, 0.32, 0.12, 0.9, u_max, gamma),
            upstream_boundary: BoundaryCondition::Inflow { q: cell_at(0.3, 0.95, u_max, gamma) },
            downstream_boundary: BoundaryCondition::Outflow,
        }],
        links: vec![],
        vehicles: vec![],
        controls: None,
    }
}

/// Sealed lane with a slow-moving density wave; mass must stay put.
pub fn wall_lane_scenario(n_cells: usize) -> Scenario {
    let (u_max, gamma) = (16.0, 0.5);
    Scenario {
        config: SolverConfig { dt: 0.1, gamma, ..SolverConfig::default() },
        lanes: vec![LaneSpec::Macro {
            id: 0,
            dx: 20.0,
            u_max,
            cells: wave_cells(n_cells, 0.4, 0.2, 0.5, u_max, gamma),
            upstream_boundary: BoundaryCondition::Wall,
            downstream_boundary: BoundaryCondition::Wall,
        }],
        links: vec![],
        vehicles: vec![],
        controls: None,
    }
}

/// Micro lane with a platoon moving at `v`, gaps slightly above equilibrium.
pub fn micro_platoon_scenario(n: usize, v: f64, params: IdmParams) -> Scenario {
    let config = SolverConfig { dt: 0.1, gamma: 0.5, ..SolverConfig::default() };
    let gap = equilibrium_gap(params, v, config.delta_exponent) * 1.05;
    let spacing = gap + params.length;
    let front = 100.0 + spacing * n as f64;
    let length = front + v * 100.0 + 200.0;
    let vehicles = (0..n)
        .map(|i| VehicleSpec { lane: 0, p: front - spacing * i as f64, v, params })
        .collect();
    Scenario {
        config,
        lanes: vec![LaneSpec::Micro { id: 0, length, lead_boundary: LeadBoundary::Free, idm_ranges: None }],
        links: vec![],
        vehicles,
        controls: None,
    }
}

#[derive(Debug, Clone)]
pub struct HybridChainParams {
    pub cells_per_macro_lane: usize,
    pub dx: f64,
    pub u_max: f64,
    pub micro_length: f64,
    pub n_vehicles: usize,
    pub seed: u64,
}

impl Default for HybridChainParams {
    fn default() -> Self {
        HybridChainParams {
            cells_per_macro_lane: 10,
            dx: 20.0,
            u_max: 16.0,
            micro_length: 150.0,
            n_vehicles: 4,
            seed: 7,
        }
    }
}

/// The three-lane chain: macro lane 0 feeds micro lane 1 through a flux
/// capacitor, micro lane 1 feeds macro lane 2 through an aggregation window.
pub fn hybrid_chain_scenario(p: &HybridChainParams) -> Scenario {
    let gamma = 0.5;
    let config = SolverConfig { dt: 0.1, gamma, rng_seed: p.seed, ..SolverConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let up_cells = random_cells(p.cells_per_macro_lane, (0.25, 0.4), (0.85, 0.95), p.u_max, gamma, &mut rng);
    let down_cells = random_cells(p.cells_per_macro_lane, (0.2, 0.3), (0.85, 0.95), p.u_max, gamma, &mut rng);

    let params = nominal_idm();
    let spacing = 30.0;
    let front = p.micro_length - 10.0;
    let vehicles: Vec<VehicleSpec> = (0..p.n_vehicles)
        .map(|i| VehicleSpec { lane: 1, p: front - spacing * i as f64, v: 10.0, params })
        .collect();

    // The downstream lane's initial inflow matches what the initial window
    // contents would aggregate to; from step 1 on the engine rewrites it.
    let window_len = p.dx;
    let in_window = vehicles.iter().filter(|v| v.p > p.micro_length - window_len).count();
    let rho_in = (in_window as f64 * config.mean_vehicle_length / window_len).min(1.0);
    let inflow_down = if in_window == 0 {
        CellState::new(0.0, 0.0)
    } else {
        CellState::from_velocity(rho_in, 10.0, p.u_max, gamma)
    };

    Scenario {
        config,
        lanes: vec![
            LaneSpec::Macro {
                id: 0,
                dx: p.dx,
                u_max: p.u_max,
                cells: up_cells,
                upstream_boundary: BoundaryCondition::Inflow { q: cell_at(0.3, 0.92, p.u_max, gamma) },
                downstream_boundary: BoundaryCondition::Outflow,
            },
            LaneSpec::Micro {
                id: 1,
                length: p.micro_length,
                lead_boundary: LeadBoundary::Free,
                idm_ranges: Some(IdmRanges {
                    s_min: [2.0, 2.0],
                    t_pref: [1.1, 1.3],
                    a_max: [1.4, 1.6],
                    a_pref: [2.0, 2.0],
                    v_targ: [13.0, 15.0],
                    length: [5.0, 5.0],
                }),
            },
            LaneSpec::Macro {
                id: 2,
                dx: p.dx,
                u_max: p.u_max,
                cells: down_cells,
                upstream_boundary: BoundaryCondition::Inflow { q: inflow_down },
                downstream_boundary: BoundaryCondition::Outflow,
            },
        ],
        links: vec![Link { from: 0, to: 1 }, Link { from: 1, to: 2 }],
        vehicles,
        controls: None,
    }
}

/// Pace-car platoon: vehicle 0 is externally controlled, followers run the
/// car-following model. Everyone starts at speed `v0` with equilibrium gaps.
pub fn pace_scenario(n_followers: usize, v0: f64, schedule_len: usize) -> Scenario {
    let config = SolverConfig { dt: 0.1, gamma: 0.5, ..SolverConfig::default() };
    let params = IdmParams { v_targ: 20.0, ..nominal_idm() };
    let spacing = equilibrium_gap(params, v0, config.delta_exponent) + params.length;
    let n = n_followers + 1;
    let front = 200.0 + spacing * n as f64;
    let length = front + 25.0 * schedule_len as f64 * config.dt + 500.0;
    let vehicles = (0..n)
        .map(|i| VehicleSpec { lane: 0, p: front - spacing * i as f64, v: v0, params })
        .collect();
    Scenario {
        config,
        lanes: vec![LaneSpec::Micro { id: 0, length, lead_boundary: LeadBoundary::Free, idm_ranges: None }],
        links: vec![],
        vehicles,
        controls: Some(ControlsSpec {
            pace_car: Some(PaceSpec { lane: 0, accel: vec![0.0; schedule_len], bound: 3.0 }),
            signal: None,
        }),
    }
}

/// Two signalized approaches sharing one junction; each lane's downstream
/// flux is gated by its approach's green window.
pub fn signal_toy_scenario(demand_we: f64, demand_ns: f64, green_we: Vec<f64>) -> Scenario {
    let (u_max, gamma) = (15.0, 0.5);
    let config = SolverConfig { dt: 0.1, gamma, ..SolverConfig::default() };
    let approach = |id: u64, demand: f64| LaneSpec::Macro {
        id,
        dx: 25.0,
        u_max,
        cells: vec![cell_at(demand, 0.95, u_max, gamma); 6],
        upstream_boundary: BoundaryCondition::Inflow { q: cell_at(demand, 0.95, u_max, gamma) },
        downstream_boundary: BoundaryCondition::Outflow,
    };
    Scenario {
        config,
        lanes: vec![approach(0, demand_we), approach(1, demand_ns)],
        links: vec![],
        vehicles: vec![],
        controls: Some(ControlsSpec {
            pace_car: None,
            signal: Some(SignalSpec {
                we_lanes: vec![0],
                ns_lanes: vec![1],
                phase_length: 15.0,
                green_we,
                min_green: 2.0,
            }),
        }),
    }
}

/// Mixed-resolution throughput scenario: one macro lane and one micro lane
/// sized so the whole network holds `total_equiv` vehicle-equivalents, a
/// fraction `eps` of them as discrete vehicles. The lanes are deliberately
/// unlinked so the per-step workload stays constant while the sweep runs.
pub fn resolution_mix_scenario(total_equiv: usize, eps: f64) -> Scenario {
    let (u_max, gamma) = (15.0, 0.5);
    let config = SolverConfig { dt: 0.1, gamma, ..SolverConfig::default() };
    let len = config.mean_vehicle_length;
    let rho = 0.5;
    let veh_per_cell = 15.0;
    let dx = veh_per_cell * len / rho;

    let n_micro = ((eps * total_equiv as f64).round() as usize).max(1);
    let n_cells = (((1.0 - eps) * total_equiv as f64 / veh_per_cell).round() as usize).max(1);

    let params = IdmParams { v_targ: 15.0, ..nominal_idm() };
    let v0 = 10.0;
    let spacing = equilibrium_gap(params, v0, config.delta_exponent) + params.length;
    let front = 100.0 + spacing * n_micro as f64;
    let length = front + 2000.0;
    let vehicles = (0..n_micro)
        .map(|i| VehicleSpec { lane: 1, p: front - spacing * i as f64, v: v0, params })
        .collect();

    Scenario {
        config,
        lanes: vec![
            LaneSpec::Macro {
                id: 0,
                dx,
                u_max,
                cells: vec![cell_at(rho, 0.9, u_max, gamma); n_cells],
                upstream_boundary: BoundaryCondition::Inflow { q: cell_at(rho, 0.9, u_max, gamma) },
                downstream_boundary: BoundaryCondition::Outflow,
            },
            LaneSpec::Micro { id: 1, length, lead_boundary: LeadBoundary::Free, idm_ranges: None },
        ],
        links: vec![],
        vehicles,
        controls: None,
    }
}
