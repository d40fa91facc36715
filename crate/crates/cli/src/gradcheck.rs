//! Gradient verification command: reverse-sweep derivatives of a fixed probe
//! loss against central finite differences, per input block, with automatic
//! exclusion of probes that cross a discrete event boundary.

use std::path::{Path, PathBuf};

use anyhow::Result;
use difftraffic_adjoint::{
    perturbed_scenario, run_scenario, zero_bundle, GradientBundle, NetworkState, StateSeed,
};
use difftraffic_core::{Scenario, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{load_scenario, note, run_error, write_json};

pub const GRADCHECK_SCHEMA: &str = "difftraffic.gradcheck/1";

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub steps: usize,
    /// Input dimensions sampled per block.
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            steps: 20,
            trials: 24,
            h: 1e-5,
            tolerance: 1e-3,
            seed: 0,
            threads: 1,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub block: String,
    pub checked: usize,
    /// Probes dropped because a perturbation changed the run's discrete
    /// event structure, where a central difference is not a derivative.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckVerdict {
    pub schema: String,
    pub scenario: String,
    pub steps: usize,
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub blocks: Vec<BlockVerdict>,
}

/// One scalar input of the scenario, addressable both in a gradient bundle
/// and as a finite-difference probe direction.
#[derive(Debug, Clone, PartialEq)]
enum Dim {
    Cell { lane: u64, index: usize, comp: usize },
    Vehicle { index: u64, comp: usize },
    Pace(usize),
    Green(usize),
    Scalar(String),
}

pub fn cmd_gradcheck(scenario_path: &Path, opts: &GradcheckOptions) -> Result<GradcheckVerdict> {
    let scenario = load_scenario(scenario_path)?;
    let verdict = check_scenario(&scenario, &scenario_path.display().to_string(), opts)?;

    println!("{:<12} {:>8} {:>9} {:>14} {:>6}", "block", "checked", "excluded", "max_rel_error", "pass");
    for b in &verdict.blocks {
        println!(
            "{:<12} {:>8} {:>9} {:>14.3e} {:>6}",
            b.block,
            b.checked,
            b.excluded,
            b.max_rel_error,
            if b.pass { "yes" } else { "NO" }
        );
    }
    println!(
        "gradcheck: {} (tolerance {:.1e}, h {:.1e})",
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.tolerance,
        verdict.h
    );
    if let Some(out) = &opts.out {
        write_json(out, &verdict)?;
    }
    if !verdict.pass {
        let bad: Vec<&str> = verdict
            .blocks
            .iter()
            .filter(|b| !b.pass)
            .map(|b| b.block.as_str())
            .collect();
        return Err(run_error(format!(
            "gradient check failed for blocks: {}",
            bad.join(", ")
        )));
    }
    Ok(verdict)
}

pub fn check_scenario(
    scenario: &Scenario,
    label: &str,
    opts: &GradcheckOptions,
) -> Result<GradcheckVerdict> {
    let (engine, tape) = run_scenario(scenario, opts.steps)
        .map_err(|e| run_error(format!("base simulation failed: {e}")))?;
    let base_sig = tape.event_signature();
    let seed = loss_seed(tape.final_state());
    let analytic = engine
        .backward(&tape, &seed)
        .map_err(|e| run_error(format!("reverse sweep failed: {e}")))?;
    let template = zero_bundle(scenario);

    let mut blocks = Vec::new();
    if opts.trials > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for (name, dims) in block_dims(&template) {
            note(&format!("gradcheck: probing block {name}"));
            blocks.push(check_block(
                scenario, &template, &analytic, base_sig, &name, &dims, opts, &mut rng,
            ));
        }
    }
    let pass = blocks.iter().all(|b| b.pass);
    Ok(GradcheckVerdict {
        schema: GRADCHECK_SCHEMA.into(),
        scenario: label.to_string(),
        steps: opts.steps,
        trials: opts.trials,
        h: opts.h,
        tolerance: opts.tolerance,
        pass,
        blocks,
    })
}

/// Mean squared state component of the final state. Smooth in every input
/// and nonzero almost everywhere, so each block gets exercised.
fn probe_loss(state: &NetworkState) -> f64 {
    let (sum, n) = loss_terms(state);
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn loss_terms(state: &NetworkState) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for lane in state.macro_lanes.values() {
        for c in &lane.cells {
            sum += c.rho * c.rho + c.y * c.y;
            n += 2;
        }
    }
    for lane in state.micro_lanes.values() {
        for v in &lane.vehicles {
            sum += v.p * v.p + v.v * v.v;
            n += 2;
        }
    }
    (sum, n)
}

/// Cotangent of `probe_loss` at the given state: 2 x / n per component.
fn loss_seed(state: &NetworkState) -> StateSeed {
    let (_, n) = loss_terms(state);
    let scale = if n == 0 { 0.0 } else { 2.0 / n as f64 };
    let mut seed = StateSeed::default();
    for (&id, lane) in &state.macro_lanes {
        seed.macro_cells.insert(
            id,
            lane.cells.iter().map(|c| Vec2(scale * c.rho, scale * c.y)).collect(),
        );
    }
    for lane in state.micro_lanes.values() {
        for v in &lane.vehicles {
            seed.vehicles.insert(v.id, Vec2(scale * v.p, scale * v.v));
        }
    }
    seed
}

fn block_dims(template: &GradientBundle) -> Vec<(String, Vec<Dim>)> {
    let mut out = Vec::new();
    for (&lane, cells) in &template.macro_cells {
        let dims = (0..cells.len())
            .flat_map(|index| (0..2).map(move |comp| Dim::Cell { lane, index, comp }))
            .collect();
        out.push((format!("macro[{lane}]"), dims));
    }
    if !template.vehicles.is_empty() {
        let dims = template
            .vehicles
            .keys()
            .flat_map(|&index| (0..2).map(move |comp| Dim::Vehicle { index, comp }))
            .collect();
        out.push(("vehicles".into(), dims));
    }
    if !template.pace.is_empty() {
        out.push(("pace".into(), (0..template.pace.len()).map(Dim::Pace).collect()));
    }
    if !template.green.is_empty() {
        out.push(("green".into(), (0..template.green.len()).map(Dim::Green).collect()));
    }
    for name in template.scalars.keys() {
        out.push((name.clone(), vec![Dim::Scalar(name.clone())]));
    }
    out
}

fn analytic_of(dim: &Dim, bundle: &GradientBundle) -> f64 {
    match dim {
        Dim::Cell { lane, index, comp } => {
            let v = bundle.macro_cells[lane][*index];
            if *comp == 0 {
                v.0
            } else {
                v.1
            }
        }
        Dim::Vehicle { index, comp } => {
            let v = bundle.vehicles.get(index).copied().unwrap_or(Vec2::ZERO);
            if *comp == 0 {
                v.0
            } else {
                v.1
            }
        }
        Dim::Pace(i) => bundle.pace[*i],
        Dim::Green(i) => bundle.green[*i],
        Dim::Scalar(name) => bundle.scalars[name],
    }
}

fn unit_direction(dim: &Dim, template: &GradientBundle) -> GradientBundle {
    let mut dir = template.clone();
    match dim {
        Dim::Cell { lane, index, comp } => {
            let cell = &mut dir.macro_cells.get_mut(lane).unwrap()[*index];
            *cell = if *comp == 0 { Vec2(1.0, 0.0) } else { Vec2(0.0, 1.0) };
        }
        Dim::Vehicle { index, comp } => {
            *dir.vehicles.get_mut(index).unwrap() =
                if *comp == 0 { Vec2(1.0, 0.0) } else { Vec2(0.0, 1.0) };
        }
        Dim::Pace(i) => dir.pace[*i] = 1.0,
        Dim::Green(i) => dir.green[*i] = 1.0,
        Dim::Scalar(name) => {
            dir.scalars.insert(name.clone(), 1.0);
        }
    }
    dir
}

/// Loss at `scenario + eps * dir`, or None when the perturbed run fails or
/// its event structure no longer matches the base run.
fn probe_once(
    scenario: &Scenario,
    dir: &GradientBundle,
    eps: f64,
    steps: usize,
    base_sig: u64,
) -> Option<f64> {
    let perturbed = perturbed_scenario(scenario, dir, eps);
    let (_, tape) = run_scenario(&perturbed, steps).ok()?;
    if tape.event_signature() != base_sig {
        return None;
    }
    Some(probe_loss(tape.final_state()))
}

#[allow(clippy::too_many_arguments)]
fn check_block(
    scenario: &Scenario,
    template: &GradientBundle,
    analytic: &GradientBundle,
    base_sig: u64,
    name: &str,
    dims: &[Dim],
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> BlockVerdict {
    let amount = opts.trials.min(dims.len());
    let picked: Vec<&Dim> = rand::seq::index::sample(rng, dims.len(), amount)
        .into_iter()
        .map(|i| &dims[i])
        .collect();
    // The additive floor keeps dimensions whose true derivative is lost in
    // finite-difference noise from dominating the relative error.
    let block_scale = dims.iter().map(|d| analytic_of(d, analytic).abs()).fold(0.0, f64::max);
    let atol = 1e-6 + 1e-3 * block_scale;

    let probe = |dim: &&Dim| -> Option<f64> {
        let ad = analytic_of(dim, analytic);
        let dir = unit_direction(dim, template);
        let hi = probe_once(scenario, &dir, opts.h, opts.steps, base_sig)?;
        let lo = probe_once(scenario, &dir, -opts.h, opts.steps, base_sig)?;
        let fd = (hi - lo) / (2.0 * opts.h);
        Some((ad - fd).abs() / (ad.abs().max(fd.abs()) + atol))
    };
    let results: Vec<Option<f64>> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .expect("thread pool");
        pool.install(|| picked.par_iter().map(probe).collect())
    } else {
        picked.iter().map(probe).collect()
    };

    let excluded = results.iter().filter(|r| r.is_none()).count();
    let errors: Vec<f64> = results.into_iter().flatten().collect();
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    BlockVerdict {
        block: name.to_string(),
        checked: errors.len(),
        excluded,
        max_rel_error,
        pass: max_rel_error <= opts.tolerance,
    }
}
