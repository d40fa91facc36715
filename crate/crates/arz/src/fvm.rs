//! Godunov finite-volume update for one macro lane, plus the exact
//! linearization of that update (tridiagonal cell blocks, boundary-state
//! blocks, speed-limit and flux-weight sensitivities) and the transpose
//! sweep the adjoint engine runs.

use difftraffic_core::state::{pow_g, u_eq, u_eq_prime};
use difftraffic_core::{BoundaryCondition, CellState, MacroLaneState, Mat2, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{flux, flux_jacobian, flux_u_max_partial};
use crate::riemann::{solve_riemann, RiemannCase, RiemannSolution};
use crate::riemann_grad::riemann_gradients;

#[derive(Debug, Error)]
pub enum FvmError {
    #[error("CFL violation: dt * max wave speed = {speed_dt:.6} exceeds dx = {dx}")]
    Cfl { speed_dt: f64, dx: f64 },
    #[error("interface {index} re-solved to {found:?} but was recorded as {expected:?}")]
    CaseMismatch { index: usize, expected: RiemannCase, found: RiemannCase },
}

/// How the post-step density clamp treated one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellClamp {
    Free,
    /// Density went negative; the cell was reset to vacuum.
    Low,
    /// Density exceeded jam; density was pinned at 1, y kept.
    High,
}

#[derive(Debug, Clone)]
pub struct FvmStepOutput {
    pub cells: Vec<CellState>,
    /// Interface solutions, one per interface (cells + 1 of them).
    pub sols: Vec<RiemannSolution>,
    pub clamps: Vec<CellClamp>,
    pub clamp_count: usize,
}

/// Exterior ghost states implied by the lane's boundary recipe. A sealed
/// upstream end is vacuum (nothing enters); a sealed downstream end mirrors
/// the edge density at rest, which the interface solver turns into an exactly
/// zero flux.
pub fn ghost_states(lane: &MacroLaneState, gamma: f64) -> (CellState, CellState) {
    let first = lane.cells[0];
    let last = *lane.cells.last().expect("macro lane has cells");
    let up = match lane.upstream_boundary {
        BoundaryCondition::Inflow { q } => q,
        BoundaryCondition::Outflow => first,
        BoundaryCondition::Wall => CellState::new(0.0, 0.0),
    };
    let down = match lane.downstream_boundary {
        BoundaryCondition::Inflow { q } => q,
        BoundaryCondition::Outflow => last,
        BoundaryCondition::Wall => {
            CellState::new(last.rho, -last.rho * u_eq(last.rho, lane.u_max, gamma))
        }
    };
    (up, down)
}

/// All interface solutions for the lane's current cells and ghosts.
pub fn interface_profile(lane: &MacroLaneState, gamma: f64) -> Vec<RiemannSolution> {
    let n = lane.cells.len();
    let (up, down) = ghost_states(lane, gamma);
    let first = lane.cells[0];
    let last = lane.cells[n - 1];
    let mut sols = Vec::with_capacity(n + 1);
    sols.push(solve_riemann(up, first, lane.u_max, gamma));
    for k in 1..n {
        sols.push(solve_riemann(lane.cells[k - 1], lane.cells[k], lane.u_max, gamma));
    }
    sols.push(solve_riemann(last, down, lane.u_max, gamma));
    sols
}

/// One explicit conservative update with time step `dt`. `weight` scales the
/// flux through the downstream interface (1 when no signal gates the lane).
/// The time step is validated against the fastest wave and never adapted.
pub fn fvm_step(
    lane: &MacroLaneState,
    gamma: f64,
    dt: f64,
    weight: f64,
) -> Result<FvmStepOutput, FvmError> {
    let n = lane.cells.len();
    let sols = interface_profile(lane, gamma);

    let max_speed = sols.iter().map(|s| s.max_speed).fold(0.0f64, f64::max);
    if dt * max_speed > lane.dx {
        return Err(FvmError::Cfl { speed_dt: dt * max_speed, dx: lane.dx });
    }

    let mut fluxes: Vec<Vec2> = sols.iter().map(|s| flux(s.q0, lane.u_max, gamma)).collect();
    fluxes[n] = fluxes[n].scale(weight);

    let coef = dt / lane.dx;
    let mut cells = Vec::with_capacity(n);
    let mut clamps = vec![CellClamp::Free; n];
    let mut clamp_count = 0;
    for i in 0..n {
        let q = lane.cells[i];
        let mut rho = q.rho - coef * (fluxes[i + 1].0 - fluxes[i].0);
        let mut y = q.y - coef * (fluxes[i + 1].1 - fluxes[i].1);
        if rho < 0.0 {
            rho = 0.0;
            y = 0.0;
            clamps[i] = CellClamp::Low;
            clamp_count += 1;
        } else if rho > 1.0 {
            rho = 1.0;
            clamps[i] = CellClamp::High;
            clamp_count += 1;
        }
        cells.push(CellState::new(rho, y));
    }
    Ok(FvmStepOutput { cells, sols, clamps, clamp_count })
}

/// Full linearization of one `fvm_step`. Blocks are indexed by the updated
/// cell: `lower[i]` maps a change of pre-step cell i-1 into post-step cell i,
/// `diag[i]` cell i, `upper[i]` cell i+1. Boundary ghost dependence is folded
/// into the edge blocks; prescribed inflow states get their own blocks so the
/// coupling adjoint can chain through them.
#[derive(Debug, Clone)]
pub struct FvmJacobians {
    pub lower: Vec<Mat2>,
    pub diag: Vec<Mat2>,
    pub upper: Vec<Mat2>,
    /// d (post-step cell 0) / d (upstream inflow state).
    pub d_inflow_up: Mat2,
    /// d (post-step last cell) / d (downstream inflow state).
    pub d_inflow_down: Mat2,
    /// d (post-step cell i) / d u_max.
    pub du_max: Vec<Vec2>,
    /// d (post-step last cell) / d (downstream flux weight).
    pub d_weight: Vec2,
}

/// Adjoint of one macro step: cotangents pulled back from the post-step cells
/// onto the pre-step cells, the boundary inflow states, the speed limit, and
/// the flux weight.
#[derive(Debug, Clone)]
pub struct LaneAdjoint {
    pub cells: Vec<Vec2>,
    pub inflow_up: Vec2,
    pub inflow_down: Vec2,
    pub du_max: f64,
    pub d_weight: f64,
}

pub fn fvm_step_jacobians(
    lane: &MacroLaneState,
    gamma: f64,
    dt: f64,
    weight: f64,
    sols: &[RiemannSolution],
    clamps: &[CellClamp],
) -> FvmJacobians {
    let n = lane.cells.len();
    let coef = dt / lane.dx;
    let u_max = lane.u_max;
    let (ghost_up, ghost_down) = ghost_states(lane, gamma);

    let mut lower = vec![Mat2::ZERO; n];
    let mut diag = vec![Mat2::IDENTITY; n];
    let mut upper = vec![Mat2::ZERO; n];
    let mut du_max_cells = vec![Vec2::ZERO; n];
    let mut d_inflow_up = Mat2::ZERO;
    let mut d_inflow_down = Mat2::ZERO;

    // Deposit d F_k / d (cell j): interface k is the right flux of cell k-1
    // (entering the update with -coef) and the left flux of cell k (+coef).
    let add = |lower: &mut Vec<Mat2>,
                   diag: &mut Vec<Mat2>,
                   upper: &mut Vec<Mat2>,
                   k: usize,
                   j: usize,
                   m: Mat2| {
        if k > 0 {
            let i = k - 1;
            match j + 1 - i {
                0 => lower[i] = lower[i] - m.scale(coef),
                1 => diag[i] = diag[i] - m.scale(coef),
                2 => upper[i] = upper[i] - m.scale(coef),
                _ => unreachable!("interface flux depends only on adjacent cells"),
            }
        }
        if k < n {
            let i = k;
            match j + 1 - i {
                0 => lower[i] = lower[i] + m.scale(coef),
                1 => diag[i] = diag[i] + m.scale(coef),
                2 => upper[i] = upper[i] + m.scale(coef),
                _ => unreachable!("interface flux depends only on adjacent cells"),
            }
        }
    };

    let mut d_weight = Vec2::ZERO;
    for k in 0..=n {
        let sol = &sols[k];
        let (q_l, q_r) = match k {
            0 => (ghost_up, lane.cells[0]),
            _ if k == n => (lane.cells[n - 1], ghost_down),
            _ => (lane.cells[k - 1], lane.cells[k]),
        };
        let g = riemann_gradients(q_l, q_r, u_max, gamma, sol);
        let fj = flux_jacobian(sol.q0, u_max, gamma);
        let w = if k == n { weight } else { 1.0 };

        let mut df_du_max = fj.mul_vec(g.d_u_max) + flux_u_max_partial(sol.q0, gamma);

        // Left slot.
        if k == 0 {
            match lane.upstream_boundary {
                BoundaryCondition::Inflow { .. } => {
                    // F_0 feeds cell 0 with +coef.
                    d_inflow_up = fj.mul_mat(g.d_ql).scale(coef * w);
                }
                BoundaryCondition::Outflow => {
                    add(&mut lower, &mut diag, &mut upper, 0, 0, fj.mul_mat(g.d_ql).scale(w));
                }
                BoundaryCondition::Wall => {}
            }
        } else {
            add(&mut lower, &mut diag, &mut upper, k, k - 1, fj.mul_mat(g.d_ql).scale(w));
        }

        // Right slot.
        if k == n {
            match lane.downstream_boundary {
                BoundaryCondition::Inflow { .. } => {
                    // F_n drains the last cell with -coef.
                    d_inflow_down = fj.mul_mat(g.d_qr).scale(-coef * w);
                }
                BoundaryCondition::Outflow => {
                    add(&mut lower, &mut diag, &mut upper, n, n - 1, fj.mul_mat(g.d_qr).scale(w));
                }
                BoundaryCondition::Wall => {
                    // Ghost (rho_e, -rho_e u_eq(rho_e)) tracks the edge cell.
                    let rho_e = lane.cells[n - 1].rho;
                    let chain = Mat2::from_rows(
                        [1.0, 0.0],
                        [
                            -u_eq(rho_e, u_max, gamma) - rho_e * u_eq_prime(rho_e, u_max, gamma),
                            0.0,
                        ],
                    );
                    add(
                        &mut lower,
                        &mut diag,
                        &mut upper,
                        n,
                        n - 1,
                        fj.mul_mat(g.d_qr).mul_mat(chain).scale(w),
                    );
                    // Its y also carries the explicit u_max factor of u_eq.
                    let dy_dum = -rho_e * (1.0 - pow_g(rho_e, gamma));
                    df_du_max = df_du_max + fj.mul_mat(g.d_qr).mul_vec(Vec2(0.0, dy_dum));
                }
            }
        } else {
            add(&mut lower, &mut diag, &mut upper, k, k, fj.mul_mat(g.d_qr).scale(w));
        }

        // Speed-limit sensitivity: -coef into cell k-1, +coef into cell k.
        let df_du_max = df_du_max.scale(w);
        if k > 0 {
            du_max_cells[k - 1] = du_max_cells[k - 1] - df_du_max.scale(coef);
        }
        if k < n {
            du_max_cells[k] = du_max_cells[k] + df_du_max.scale(coef);
        }

        if k == n {
            d_weight = flux(sol.q0, u_max, gamma).scale(-coef);
        }
    }

    // Clamped components are pinned, so their rows vanish.
    for (i, clamp) in clamps.iter().enumerate() {
        let rows: &[usize] = match clamp {
            CellClamp::Free => &[],
            CellClamp::Low => &[0, 1],
            CellClamp::High => &[0],
        };
        for &r in rows {
            lower[i].0[r] = [0.0, 0.0];
            diag[i].0[r] = [0.0, 0.0];
            upper[i].0[r] = [0.0, 0.0];
            if r == 0 {
                du_max_cells[i].0 = 0.0;
            } else {
                du_max_cells[i].1 = 0.0;
            }
            if i == 0 {
                d_inflow_up.0[r] = [0.0, 0.0];
            }
            if i == n - 1 {
                d_inflow_down.0[r] = [0.0, 0.0];
                if r == 0 {
                    d_weight.0 = 0.0;
                } else {
                    d_weight.1 = 0.0;
                }
            }
        }
    }

    FvmJacobians { lower, diag, upper, d_inflow_up, d_inflow_down, du_max: du_max_cells, d_weight }
}

/// Re-solve the interface profile and check it resolves to the recorded
/// cases; replay must be bitwise-deterministic for the adjoint to be valid.
pub fn verify_cases(sols: &[RiemannSolution], expected: &[RiemannCase]) -> Result<(), FvmError> {
    for (index, (sol, exp)) in sols.iter().zip(expected).enumerate() {
        if sol.case != *exp {
            return Err(FvmError::CaseMismatch { index, expected: *exp, found: sol.case });
        }
    }
    Ok(())
}

/// Pull a cotangent on the post-step cells back through one macro step.
pub fn fvm_step_adjoint(jac: &FvmJacobians, lambda_out: &[Vec2]) -> LaneAdjoint {
    let n = lambda_out.len();
    let mut cells = vec![Vec2::ZERO; n];
    for i in 0..n {
        let mut acc = jac.diag[i].tr_mul_vec(lambda_out[i]);
        if i + 1 < n {
            acc = acc + jac.lower[i + 1].tr_mul_vec(lambda_out[i + 1]);
        }
        if i > 0 {
            acc = acc + jac.upper[i - 1].tr_mul_vec(lambda_out[i - 1]);
        }
        cells[i] = acc;
    }
    let du_max = jac.du_max.iter().zip(lambda_out).map(|(d, l)| d.dot(*l)).sum();
    LaneAdjoint {
        cells,
        inflow_up: jac.d_inflow_up.tr_mul_vec(lambda_out[0]),
        inflow_down: jac.d_inflow_down.tr_mul_vec(lambda_out[n - 1]),
        du_max,
        d_weight: jac.d_weight.dot(lambda_out[n - 1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use difftraffic_core::builders::wave_cells;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const UM: f64 = 16.0;
    const G: f64 = 0.5;
    const DT: f64 = 0.1;

    fn lane(cells: Vec<CellState>, up: BoundaryCondition, down: BoundaryCondition) -> MacroLaneState {
        MacroLaneState { cells, dx: 20.0, u_max: UM, upstream_boundary: up, downstream_boundary: down }
    }

    #[test]
    fn uniform_state_is_a_bitwise_fixed_point() {
        let q = CellState::from_velocity(0.35, 9.0, UM, G);
        let l = lane(
            vec![q; 8],
            BoundaryCondition::Inflow { q },
            BoundaryCondition::Outflow,
        );
        let out = fvm_step(&l, G, DT, 1.0).unwrap();
        for c in &out.cells {
            assert_eq!(c.rho.to_bits(), q.rho.to_bits());
            assert_eq!(c.y.to_bits(), q.y.to_bits());
        }
        assert_eq!(out.clamp_count, 0);
    }

    #[test]
    fn sealed_lane_conserves_mass_for_a_thousand_steps() {
        let mut l = lane(
            wave_cells(10, 0.4, 0.2, 0.5, UM, G),
            BoundaryCondition::Wall,
            BoundaryCondition::Wall,
        );
        let m0 = l.mass();
        for _ in 0..1000 {
            let out = fvm_step(&l, G, DT, 1.0).unwrap();
            assert_eq!(out.clamp_count, 0);
            l.cells = out.cells;
        }
        assert!((l.mass() - m0).abs() < 1e-9, "drift {}", (l.mass() - m0).abs());
    }

    #[test]
    fn oversized_time_step_is_rejected() {
        let l = lane(
            wave_cells(4, 0.3, 0.1, 0.9, UM, G),
            BoundaryCondition::Outflow,
            BoundaryCondition::Outflow,
        );
        let err = fvm_step(&l, G, 10.0, 1.0).unwrap_err();
        assert!(matches!(err, FvmError::Cfl { .. }));
        assert!(err.to_string().contains("CFL violation"));
    }

    #[test]
    fn dense_fast_traffic_into_a_wall_trips_the_jam_clamp() {
        let mut l = lane(
            vec![CellState::from_velocity(0.9, 0.5 * UM, UM, G); 6],
            BoundaryCondition::Inflow { q: CellState::from_velocity(0.9, 0.5 * UM, UM, G) },
            BoundaryCondition::Wall,
        );
        let mut clamped = 0;
        for _ in 0..80 {
            let out = fvm_step(&l, G, DT, 1.0).unwrap();
            clamped += out.clamp_count;
            l.cells = out.cells;
        }
        assert!(clamped > 0);
        assert!(l.cells.iter().all(|c| c.rho <= 1.0 && c.rho >= 0.0));
    }

    /// Independent re-statement of the update rule: build the padded state
    /// array, difference the interface fluxes, clamp. Must agree bitwise.
    fn naive_step(l: &MacroLaneState, weight: f64) -> Vec<CellState> {
        let (up, down) = ghost_states(l, G);
        let mut padded = vec![up];
        padded.extend_from_slice(&l.cells);
        padded.push(down);
        let mut fluxes = Vec::new();
        for w in padded.windows(2) {
            let s = solve_riemann(w[0], w[1], l.u_max, G);
            fluxes.push(flux(s.q0, l.u_max, G));
        }
        let last = fluxes.len() - 1;
        fluxes[last] = fluxes[last].scale(weight);
        l.cells
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let rho = q.rho - DT / l.dx * (fluxes[i + 1].0 - fluxes[i].0);
                let y = q.y - DT / l.dx * (fluxes[i + 1].1 - fluxes[i].1);
                if rho < 0.0 {
                    CellState::new(0.0, 0.0)
                } else if rho > 1.0 {
                    CellState::new(1.0, y)
                } else {
                    CellState::new(rho, y)
                }
            })
            .collect()
    }

    #[test]
    fn step_matches_an_independent_restatement_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bcs = [
            BoundaryCondition::Outflow,
            BoundaryCondition::Wall,
            BoundaryCondition::Inflow { q: CellState::from_velocity(0.3, 10.0, UM, G) },
        ];
        for up in bcs {
            for down in bcs {
                let cells: Vec<CellState> = (0..7)
                    .map(|_| {
                        CellState::from_velocity(
                            rng.gen_range(0.05..0.9),
                            rng.gen_range(0.0..0.5) * UM,
                            UM,
                            G,
                        )
                    })
                    .collect();
                let l = lane(cells, up, down);
                let got = fvm_step(&l, G, DT, 0.7).unwrap().cells;
                let want = naive_step(&l, 0.7);
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.rho.to_bits(), w.rho.to_bits());
                    assert_eq!(g.y.to_bits(), w.y.to_bits());
                }
            }
        }
    }

    fn fd_jacobian_check(l: &MacroLaneState, weight: f64) {
        let out = fvm_step(l, G, DT, weight).unwrap();
        let jac = fvm_step_jacobians(l, G, DT, weight, &out.sols, &out.clamps);
        let n = l.cells.len();
        let h = 1e-7;
        let step_of = |cells: Vec<CellState>, lm: &MacroLaneState| {
            let mut lp = lm.clone();
            lp.cells = cells;
            fvm_step(&lp, G, DT, weight).unwrap().cells
        };
        for j in 0..n {
            for comp in 0..2 {
                let mut plus = l.cells.clone();
                let mut minus = l.cells.clone();
                if comp == 0 {
                    plus[j].rho += h;
                    minus[j].rho -= h;
                } else {
                    plus[j].y += h;
                    minus[j].y -= h;
                }
                let cp = step_of(plus, l);
                let cm = step_of(minus, l);
                for i in 0..n {
                    let fd = Vec2(
                        (cp[i].rho - cm[i].rho) / (2.0 * h),
                        (cp[i].y - cm[i].y) / (2.0 * h),
                    );
                    let block = if j + 1 == i {
                        jac.lower[i]
                    } else if j == i {
                        jac.diag[i]
                    } else if j == i + 1 {
                        jac.upper[i]
                    } else {
                        Mat2::ZERO
                    };
                    let an = Vec2(block.0[0][comp], block.0[1][comp]);
                    assert!(
                        (an - fd).norm() < 1e-5 * fd.norm().max(1.0),
                        "cell {i} wrt cell {j} comp {comp}: {an:?} vs {fd:?}"
                    );
                }
            }
        }
        // Speed limit.
        {
            let mut lp = l.clone();
            lp.u_max += h;
            let mut lm = l.clone();
            lm.u_max -= h;
            let cp = fvm_step(&lp, G, DT, weight).unwrap().cells;
            let cm = fvm_step(&lm, G, DT, weight).unwrap().cells;
            for i in 0..n {
                let fd = Vec2((cp[i].rho - cm[i].rho) / (2.0 * h), (cp[i].y - cm[i].y) / (2.0 * h));
                assert!(
                    (jac.du_max[i] - fd).norm() < 1e-5 * fd.norm().max(1.0),
                    "du_max cell {i}: {:?} vs {fd:?}",
                    jac.du_max[i]
                );
            }
        }
        // Flux weight.
        {
            let cp = fvm_step(l, G, DT, weight + h).unwrap().cells;
            let cm = fvm_step(l, G, DT, weight - h).unwrap().cells;
            let fd = Vec2(
                (cp[n - 1].rho - cm[n - 1].rho) / (2.0 * h),
                (cp[n - 1].y - cm[n - 1].y) / (2.0 * h),
            );
            assert!((jac.d_weight - fd).norm() < 1e-5 * fd.norm().max(1.0));
        }
        // Prescribed inflow state.
        if let BoundaryCondition::Inflow { q } = l.upstream_boundary {
            for comp in 0..2 {
                let mut qp = q;
                let mut qm = q;
                if comp == 0 {
                    qp.rho += h;
                    qm.rho -= h;
                } else {
                    qp.y += h;
                    qm.y -= h;
                }
                let mut lp = l.clone();
                lp.upstream_boundary = BoundaryCondition::Inflow { q: qp };
                let mut lm = l.clone();
                lm.upstream_boundary = BoundaryCondition::Inflow { q: qm };
                let cp = fvm_step(&lp, G, DT, weight).unwrap().cells;
                let cm = fvm_step(&lm, G, DT, weight).unwrap().cells;
                let fd = Vec2((cp[0].rho - cm[0].rho) / (2.0 * h), (cp[0].y - cm[0].y) / (2.0 * h));
                let an = Vec2(jac.d_inflow_up.0[0][comp], jac.d_inflow_up.0[1][comp]);
                assert!(
                    (an - fd).norm() < 1e-5 * fd.norm().max(1.0),
                    "inflow comp {comp}: {an:?} vs {fd:?}"
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences_across_boundary_recipes() {
        let q_in = CellState::from_velocity(0.3, 0.92 * u_eq(0.3, UM, G), UM, G);
        let combos = [
            (BoundaryCondition::Inflow { q: q_in }, BoundaryCondition::Outflow),
            (BoundaryCondition::Outflow, BoundaryCondition::Outflow),
            (BoundaryCondition::Wall, BoundaryCondition::Wall),
            (BoundaryCondition::Inflow { q: q_in }, BoundaryCondition::Wall),
        ];
        for (up, down) in combos {
            let l = lane(wave_cells(5, 0.35, 0.1, 0.9, UM, G), up, down);
            fd_jacobian_check(&l, 0.7);
        }
    }

    #[test]
    fn adjoint_is_the_transpose_of_the_assembled_jacobian() {
        let l = lane(
            wave_cells(6, 0.3, 0.15, 0.85, UM, G),
            BoundaryCondition::Inflow { q: CellState::from_velocity(0.25, 11.0, UM, G) },
            BoundaryCondition::Outflow,
        );
        let out = fvm_step(&l, G, DT, 0.9).unwrap();
        let jac = fvm_step_jacobians(&l, G, DT, 0.9, &out.sols, &out.clamps);
        let n = l.cells.len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lambda: Vec<Vec2> =
                (0..n).map(|_| Vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let v: Vec<Vec2> =
                (0..n).map(|_| Vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            // J v through the blocks.
            let jv: Vec<Vec2> = (0..n)
                .map(|i| {
                    let mut acc = jac.diag[i].mul_vec(v[i]);
                    if i > 0 {
                        acc = acc + jac.lower[i].mul_vec(v[i - 1]);
                    }
                    if i + 1 < n {
                        acc = acc + jac.upper[i].mul_vec(v[i + 1]);
                    }
                    acc
                })
                .collect();
            let adj = fvm_step_adjoint(&jac, &lambda);
            let lhs: f64 = lambda.iter().zip(&jv).map(|(a, b)| a.dot(*b)).sum();
            let rhs: f64 = adj.cells.iter().zip(&v).map(|(a, b)| a.dot(*b)).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn recorded_cases_replay_exactly() {
        let l = lane(
            wave_cells(9, 0.35, 0.18, 0.8, UM, G),
            BoundaryCondition::Outflow,
            BoundaryCondition::Wall,
        );
        let out = fvm_step(&l, G, DT, 1.0).unwrap();
        let recorded: Vec<RiemannCase> = out.sols.iter().map(|s| s.case).collect();
        let replayed = interface_profile(&l, G);
        verify_cases(&replayed, &recorded).unwrap();
        // A tampered recording must be rejected.
        let mut tampered = recorded.clone();
        tampered[0] = if tampered[0] == RiemannCase::LeftVacuum {
            RiemannCase::ShockLeft
        } else {
            RiemannCase::LeftVacuum
        };
        assert!(matches!(
            verify_cases(&replayed, &tampered),
            Err(FvmError::CaseMismatch { index: 0, .. })
        ));
    }
}
