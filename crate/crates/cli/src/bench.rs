//! Benchmark command: wall-clock scaling of the forward run, the reverse
//! sweep, and the finite-difference gradient it replaces, plus a resolution
//! sweep trading macro cells for individual vehicles at fixed total demand.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use difftraffic_adjoint::{finite_diff_gradient, zero_bundle, Engine, StateSeed};
use difftraffic_core::{builders, Scenario, Vec2};
use serde::{Deserialize, Serialize};

use crate::io::{note, run_error, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFamily {
    Timing,
    Sweep,
    All,
}

/// Mean and coefficient of variation over repeated timings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub cv: f64,
}

fn stat(samples: &[f64]) -> Stat {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 || mean == 0.0 {
        return Stat { mean, cv: 0.0 };
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Stat { mean, cv: var.sqrt() / mean }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub cells: usize,
    pub steps: usize,
    /// Differentiable input dimensions, which is also the number of central
    /// difference pairs the full finite-difference gradient runs.
    pub input_dims: usize,
    pub forward: Stat,
    pub recorded_forward: Stat,
    pub backward: Stat,
    pub fd_gradient: Stat,
    /// Recorded forward plus reverse sweep: the cost of one full gradient.
    pub analytic_total_seconds: f64,
    pub fd_over_analytic: f64,
    pub backward_over_recorded_forward: f64,
}

/// Time one macro lane size at one horizon, `repeats` samples per phase.
pub fn time_scale(cells: usize, steps: usize, label: &str, repeats: usize) -> Result<TimingRow> {
    let sc = builders::macro_lane_scenario(cells);
    let input_dims = bundle_dims(&sc);
    let (engine, initial) =
        Engine::new(&sc).map_err(|e| run_error(format!("bench setup failed: {e}")))?;

    let mut forward = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut state = initial.clone();
        let t0 = Instant::now();
        engine
            .simulate(&mut state, steps)
            .map_err(|e| run_error(format!("bench forward failed: {e}")))?;
        forward.push(t0.elapsed().as_secs_f64());
    }

    let mut recorded = Vec::with_capacity(repeats);
    let mut tape = None;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let t = engine
            .simulate_and_record(&initial, steps)
            .map_err(|e| run_error(format!("bench recording failed: {e}")))?;
        recorded.push(t0.elapsed().as_secs_f64());
        tape = Some(t);
    }
    let tape = tape.expect("at least one repeat");

    let mut seed = StateSeed::default();
    for (&id, lane) in &tape.final_state().macro_lanes {
        seed.macro_cells.insert(id, vec![Vec2(1.0, 1.0); lane.cells.len()]);
    }
    let mut backward = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        engine
            .backward(&tape, &seed)
            .map_err(|e| run_error(format!("bench reverse sweep failed: {e}")))?;
        backward.push(t0.elapsed().as_secs_f64());
    }

    // The same scalar the reverse sweep was seeded with: a uniform weighting
    // of every final cell component.
    let loss = |state: &difftraffic_adjoint::NetworkState| -> f64 {
        let mut sum = 0.0;
        for lane in state.macro_lanes.values() {
            for c in &lane.cells {
                sum += c.rho + c.y;
            }
        }
        sum
    };
    let mut fd = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        finite_diff_gradient(&sc, steps, 1e-6, &loss)
            .map_err(|e| run_error(format!("bench finite differences failed: {e}")))?;
        fd.push(t0.elapsed().as_secs_f64());
    }

    let forward = stat(&forward);
    let recorded_forward = stat(&recorded);
    let backward = stat(&backward);
    let fd_gradient = stat(&fd);
    let analytic_total_seconds = recorded_forward.mean + backward.mean;
    Ok(TimingRow {
        label: label.to_string(),
        cells,
        steps,
        input_dims,
        forward,
        recorded_forward,
        backward,
        fd_gradient,
        analytic_total_seconds,
        fd_over_analytic: fd_gradient.mean / analytic_total_seconds,
        backward_over_recorded_forward: backward.mean / recorded_forward.mean,
    })
}

fn bundle_dims(sc: &Scenario) -> usize {
    let b = zero_bundle(sc);
    let cells: usize = b.macro_cells.values().map(|v| 2 * v.len()).sum();
    cells + 2 * b.vehicles.len() + b.pace.len() + b.green.len() + b.scalars.len()
}

pub fn timing_family(repeats: usize) -> Result<Vec<TimingRow>> {
    note("bench: timing 10 cells / 1000 steps");
    let small = time_scale(10, 1000, "10/1K", repeats)?;
    note("bench: timing 50 cells / 5000 steps");
    let large = time_scale(50, 5000, "50/5K", repeats)?;
    Ok(vec![small, large])
}

/// Micro fraction of the total demand, smallest to largest.
pub const SWEEP_EPS: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub vehicles: usize,
    pub cells: usize,
    pub steps_per_sec: f64,
}

/// Throughput at each micro fraction, median over `rounds`. The second
/// return is whether throughput is monotone non-increasing in eps.
pub fn sweep_family(total_equiv: usize, steps: usize, rounds: usize) -> Result<(Vec<SweepRow>, bool)> {
    let mut rows = Vec::new();
    for eps in SWEEP_EPS {
        let sc = builders::resolution_mix_scenario(total_equiv, eps);
        let (engine, initial) =
            Engine::new(&sc).map_err(|e| run_error(format!("sweep setup failed: {e}")))?;
        let mut samples = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let mut state = initial.clone();
            let t0 = Instant::now();
            engine
                .simulate(&mut state, steps)
                .map_err(|e| run_error(format!("sweep run failed: {e}")))?;
            samples.push(t0.elapsed().as_secs_f64());
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        let median = samples[samples.len() / 2];
        rows.push(SweepRow {
            eps,
            vehicles: initial.micro_lanes.values().map(|l| l.vehicles.len()).sum(),
            cells: initial.macro_lanes.values().map(|l| l.cells.len()).sum(),
            steps_per_sec: steps as f64 / median,
        });
        note(&format!("bench: eps {eps} done"));
    }
    let monotone = rows.windows(2).all(|w| w[1].steps_per_sec <= w[0].steps_per_sec);
    Ok((rows, monotone))
}

pub fn cmd_bench(
    family: BenchFamily,
    quick: bool,
    repeats: usize,
    out_dir: Option<&Path>,
) -> Result<()> {
    if matches!(family, BenchFamily::Timing | BenchFamily::All) {
        let rows = if quick {
            vec![time_scale(10, 200, "10/200", repeats.min(3))?]
        } else {
            timing_family(repeats)?
        };
        print_timing(&rows);
        if let Some(dir) = out_dir {
            write_json(&dir.join("bench_timing.json"), &rows)?;
        }
    }
    if matches!(family, BenchFamily::Sweep | BenchFamily::All) {
        let (rows, monotone) = if quick {
            sweep_family(1000, 40, 3)?
        } else {
            sweep_family(10_000, 120, 5)?
        };
        print_sweep(&rows, monotone);
        if let Some(dir) = out_dir {
            write_json(&dir.join("bench_sweep.json"), &rows)?;
        }
        if !quick && !monotone {
            return Err(run_error(
                "resolution sweep throughput is not monotone non-increasing in the micro fraction"
                    .to_string(),
            ));
        }
    }
    Ok(())
}

fn print_timing(rows: &[TimingRow]) {
    println!(
        "{:<8} {:>6} {:>6} {:>5} {:>12} {:>12} {:>12} {:>12} {:>10} {:>8}",
        "label", "cells", "steps", "dims", "forward_s", "recorded_s", "backward_s", "fd_grad_s",
        "fd/adj", "bwd/fwd"
    );
    for r in rows {
        println!(
            "{:<8} {:>6} {:>6} {:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.2} {:>8.3}",
            r.label,
            r.cells,
            r.steps,
            r.input_dims,
            r.forward.mean,
            r.recorded_forward.mean,
            r.backward.mean,
            r.fd_gradient.mean,
            r.fd_over_analytic,
            r.backward_over_recorded_forward,
        );
    }
}

fn print_sweep(rows: &[SweepRow], monotone: bool) {
    println!("{:<6} {:>9} {:>7} {:>14}", "eps", "vehicles", "cells", "steps_per_sec");
    for r in rows {
        println!("{:<6} {:>9} {:>7} {:>14.1}", r.eps, r.vehicles, r.cells, r.steps_per_sec);
    }
    println!(
        "sweep: throughput {} in micro fraction",
        if monotone { "monotone non-increasing" } else { "NOT monotone" }
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_constant_samples_has_zero_cv() {
        let s = stat(&[2.0, 2.0, 2.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.cv, 0.0);
    }

    #[test]
    fn tiny_timing_row_reports_positive_times() {
        let row = time_scale(4, 20, "4/20", 2).unwrap();
        assert!(row.forward.mean > 0.0);
        assert!(row.recorded_forward.mean > 0.0);
        assert!(row.backward.mean > 0.0);
        assert!(row.fd_gradient.mean > 0.0);
        assert_eq!(row.input_dims, 8);
    }

    #[test]
    fn tiny_sweep_produces_one_row_per_eps() {
        let (rows, _) = sweep_family(150, 5, 1).unwrap();
        assert_eq!(rows.len(), SWEEP_EPS.len());
        assert!(rows.iter().all(|r| r.steps_per_sec > 0.0));
        assert!(rows[0].cells > rows[5].cells);
        assert!(rows[0].vehicles < rows[5].vehicles);
    }
}
