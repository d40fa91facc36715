//! End-to-end tests of the difftraffic binary: spawn it as a subprocess and
//! check outputs, exit codes, and error wording.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use difftraffic_arz::solve_riemann;
use difftraffic_cli::gradcheck::GradcheckVerdict;
use difftraffic_cli::report::RunReport;
use difftraffic_core::{
    builders, BoundaryCondition, CellState, LaneSpec, Scenario, SolverConfig,
};
use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difftraffic"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn difftraffic");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn difftraffic");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn minimal_scenario_one_step_writes_two_cell_rows() {
    let dir = tempdir().unwrap();
    run_ok(bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(scenarios_dir().join("minimal.json"))
        .args(["--steps", "1", "--out"])
        .arg(dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("states.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one cell row per recorded state");
    assert_eq!(lines[0], "step,time,lane_id,record,index,v1,v2,v3");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[3], "cell");
    let mantissa = fields[5].split('e').next().unwrap();
    let digits = mantissa.trim_start_matches('-').split('.').nth(1).unwrap();
    assert_eq!(digits.len(), 16, "17 significant digits per float field");
}

#[test]
fn hybrid_demo_runs_a_thousand_steps_without_warnings() {
    let dir = tempdir().unwrap();
    run_ok(bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(scenarios_dir().join("hybrid_chain.json"))
        .args(["--steps", "1000", "--out"])
        .arg(dir.path()));
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report.counters.warnings, 0);
    assert!(report.counters.vehicles_emitted > 0);
    assert!(report.counters.vehicles_exited > 0);
}

#[test]
fn malformed_scenario_exits_two_and_names_the_missing_key() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"config": {"gamma": 0.5}}"#).unwrap();
    let (code, stderr) = run_code(bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&path)
        .args(["--steps", "1", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("dt"), "stderr should name the missing key: {stderr}");
}

#[test]
fn semantically_invalid_scenario_exits_two() {
    let dir = tempdir().unwrap();
    let mut value: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(scenarios_dir().join("minimal.json")).unwrap(),
    )
    .unwrap();
    value["config"]["dt"] = serde_json::json!(-1.0);
    let path = dir.path().join("bad_dt.json");
    std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    let (code, stderr) = run_code(bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&path)
        .args(["--steps", "1", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("dt"), "stderr should mention the bad field: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, _) = run_code(bin().arg("simulate").arg("--no-such-flag"));
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_micro_platoon_passes_at_tight_tolerance() {
    let dir = tempdir().unwrap();
    let verdict_path = dir.path().join("verdict.json");
    run_ok(bin()
        .arg("gradcheck")
        .arg("--scenario")
        .arg(scenarios_dir().join("micro_platoon.json"))
        .args(["--tolerance", "1e-5", "--out"])
        .arg(&verdict_path));
    let verdict: GradcheckVerdict =
        serde_json::from_str(&std::fs::read_to_string(&verdict_path).unwrap()).unwrap();
    assert!(verdict.pass);
    assert_eq!(verdict.blocks.len(), 1);
    assert_eq!(verdict.blocks[0].block, "vehicles");
    assert!(verdict.blocks[0].checked > 0);
}

#[test]
fn gradcheck_zero_trials_reports_an_empty_passing_table() {
    let dir = tempdir().unwrap();
    let verdict_path = dir.path().join("verdict.json");
    run_ok(bin()
        .arg("gradcheck")
        .arg("--scenario")
        .arg(scenarios_dir().join("macro_wave.json"))
        .args(["--trials", "0", "--out"])
        .arg(&verdict_path));
    let verdict: GradcheckVerdict =
        serde_json::from_str(&std::fs::read_to_string(&verdict_path).unwrap()).unwrap();
    assert!(verdict.pass);
    assert!(verdict.blocks.is_empty());
}

/// Right state tuned so the interface shock speed sits at the sign boundary:
/// any probe shifts the speed's sign, the sampled branch flips, and the
/// checker must exclude the probe rather than difference across the kink.
#[test]
fn gradcheck_excludes_probes_across_a_near_stationary_shock() {
    let (u_max, gamma) = (16.0, 0.5);
    let q_l = CellState::from_velocity(0.35, 6.0, u_max, gamma);
    let case_at = |u_r: f64| {
        solve_riemann(q_l, CellState::from_velocity(0.7, u_r, u_max, gamma), u_max, gamma).case
    };
    let (mut lo, mut hi) = (0.1, 5.9);
    assert_ne!(case_at(lo), case_at(hi), "endpoints must bracket the branch flip");
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if case_at(mid) == case_at(lo) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q_r = CellState::from_velocity(0.7, 0.5 * (lo + hi), u_max, gamma);
    let scenario = Scenario {
        config: SolverConfig::default(),
        lanes: vec![LaneSpec::Macro {
            id: 0,
            dx: 20.0,
            u_max,
            cells: vec![q_l, q_r],
            upstream_boundary: BoundaryCondition::Inflow { q: q_l },
            downstream_boundary: BoundaryCondition::Outflow,
        }],
        links: vec![],
        vehicles: vec![],
        controls: None,
    };

    let dir = tempdir().unwrap();
    let scenario_path = dir.path().join("shock.json");
    scenario.save(&scenario_path).unwrap();
    let verdict_path = dir.path().join("verdict.json");
    run_ok(bin()
        .arg("gradcheck")
        .arg("--scenario")
        .arg(&scenario_path)
        .args(["--steps", "3", "--out"])
        .arg(&verdict_path));
    let verdict: GradcheckVerdict =
        serde_json::from_str(&std::fs::read_to_string(&verdict_path).unwrap()).unwrap();
    assert!(verdict.pass, "excluded probes must not fail the run");
    let block = verdict.blocks.iter().find(|b| b.block == "macro[0]").unwrap();
    assert!(block.excluded >= 1, "the near-stationary shock must exclude probes: {block:?}");
}

#[test]
fn estimate_reduces_the_loss_end_to_end() {
    let dir = tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    std::fs::write(
        &problem,
        r#"{
  "horizon_seconds": 2.0,
  "randomize_init": {"seed": 5, "rho": [0.1, 0.5], "velocity_fraction": [0.7, 1.0]},
  "settings": {"iterations": 15}
}"#,
    )
    .unwrap();
    run_ok(bin()
        .arg("estimate")
        .arg("--scenario")
        .arg(scenarios_dir().join("macro_wave.json"))
        .arg("--problem")
        .arg(&problem)
        .arg("--out")
        .arg(dir.path()));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("estimate_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["final_loss"].as_f64().unwrap() < report["initial_loss"].as_f64().unwrap());
    assert!(report["reduction_factor"].as_f64().unwrap() > 1.0);
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("iteration,value,gradient_norm,step_size\n"));
    Scenario::load(&dir.path().join("solution.json")).unwrap();
}

#[test]
fn estimate_without_horizon_exits_two_naming_the_key() {
    let dir = tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    std::fs::write(&problem, r#"{"settings": {}}"#).unwrap();
    let (code, stderr) = run_code(bin()
        .arg("estimate")
        .arg("--scenario")
        .arg(scenarios_dir().join("macro_wave.json"))
        .arg("--problem")
        .arg(&problem)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(stderr.contains("horizon_seconds"), "stderr should name the key: {stderr}");
}

#[test]
fn control_pace_beats_the_zero_schedule() {
    let dir = tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    let v_targ = vec![9.0; 40];
    std::fs::write(
        &problem,
        serde_json::to_string(&serde_json::json!({
            "kind": "pace_car",
            "constants": {"v_targ": v_targ},
            "settings": {"iterations": 25}
        }))
        .unwrap(),
    )
    .unwrap();
    run_ok(bin()
        .arg("control")
        .arg("--scenario")
        .arg(scenarios_dir().join("pace_step_change.json"))
        .arg("--problem")
        .arg(&problem)
        .arg("--out")
        .arg(dir.path()));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("control_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["improvement"].as_f64().unwrap() > 0.0);
    let solution = Scenario::load(&dir.path().join("solution.json")).unwrap();
    let accel = solution.controls.unwrap().pace_car.unwrap().accel;
    assert_eq!(accel.len(), 40);
}

#[test]
fn control_signal_returns_feasible_greens() {
    let dir = tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    std::fs::write(&problem, r#"{"kind": "signal_timing", "settings": {"iterations": 3}}"#)
        .unwrap();
    run_ok(bin()
        .arg("control")
        .arg("--scenario")
        .arg(scenarios_dir().join("signal_two_phase.json"))
        .arg("--problem")
        .arg(&problem)
        .arg("--out")
        .arg(dir.path()));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("control_report.json")).unwrap(),
    )
    .unwrap();
    let greens = report["greens"].as_array().unwrap();
    assert_eq!(greens.len(), 2);
    for g in greens {
        let g = g.as_f64().unwrap();
        assert!((2.0..=13.0).contains(&g), "green {g} outside feasible bounds");
    }
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(scenarios_dir().join("hybrid_chain.json"))
            .args(["--steps", "200", "--seed", "5", "--mode", "stoch", "--out"])
            .arg(out));
    }
    for name in ["states.csv", "emissions.csv"] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identically seeded runs");
    }
}

#[test]
fn bench_quick_writes_parseable_tables() {
    let dir = tempdir().unwrap();
    run_ok(bin().args(["bench", "--quick", "--repeats", "2", "--out"]).arg(dir.path()));
    let timing: Vec<difftraffic_cli::bench::TimingRow> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("bench_timing.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(timing.len(), 1);
    assert!(timing[0].fd_gradient.mean > 0.0);
    let sweep: Vec<difftraffic_cli::bench::SweepRow> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("bench_sweep.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sweep.len(), difftraffic_cli::bench::SWEEP_EPS.len());
}

#[test]
fn bundled_scenarios_match_their_builders() {
    let dir = scenarios_dir();
    let expect: Vec<(&str, Scenario)> = vec![
        ("minimal", builders::single_cell_scenario()),
        ("macro_wave", builders::macro_lane_scenario(10)),
        ("wall_lane", builders::wall_lane_scenario(16)),
        ("micro_platoon", builders::micro_platoon_scenario(10, 11.0, builders::nominal_idm())),
        ("hybrid_chain", builders::hybrid_chain_scenario(&builders::HybridChainParams::default())),
        ("pace_step_change", builders::pace_scenario(3, 14.0, 40)),
        ("signal_two_phase", builders::signal_toy_scenario(0.1, 0.1, vec![4.0, 11.0])),
    ];
    for (name, sc) in expect {
        let text = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        assert_eq!(text, sc.to_json_pretty() + "\n", "{name}.json drifted from its builder");
    }
}
