//! Regenerates the bundled scenario and problem files under scenarios/.

use std::fs;
use std::path::Path;

use difftraffic_cli::spec_files::{
    ConstantsSpec, ControlKindSpec, ControlSpec, EstimateSpec, RandomizeSpec, SettingsSpec,
};
use difftraffic_core::builders;
use difftraffic_core::Scenario;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let problems = root.join("problems");
    fs::create_dir_all(&problems).expect("create scenarios directory");

    let scenarios: Vec<(&str, Scenario)> = vec![
        ("minimal", builders::single_cell_scenario()),
        ("macro_wave", builders::macro_lane_scenario(10)),
        ("wall_lane", builders::wall_lane_scenario(16)),
        ("micro_platoon", builders::micro_platoon_scenario(10, 11.0, builders::nominal_idm())),
        ("hybrid_chain", builders::hybrid_chain_scenario(&builders::HybridChainParams::default())),
        ("pace_step_change", builders::pace_scenario(3, 14.0, 40)),
        ("signal_two_phase", builders::signal_toy_scenario(0.1, 0.1, vec![4.0, 11.0])),
    ];
    for (name, sc) in &scenarios {
        let path = root.join(format!("{name}.json"));
        fs::write(&path, sc.to_json_pretty() + "\n").expect("write scenario");
        println!("wrote {}", path.display());
    }

    let estimate_macro = EstimateSpec {
        horizon_seconds: 10.0,
        target: None,
        randomize_init: Some(RandomizeSpec {
            seed: 4242,
            rho: [0.05, 0.6],
            velocity_fraction: [0.5, 1.0],
        }),
        settings: SettingsSpec { iterations: Some(500), ..Default::default() },
    };
    let estimate_hybrid = EstimateSpec {
        horizon_seconds: 10.0,
        target: None,
        randomize_init: Some(RandomizeSpec {
            seed: 7373,
            rho: [0.2, 0.4],
            velocity_fraction: [0.85, 0.95],
        }),
        settings: SettingsSpec { iterations: Some(500), ..Default::default() },
    };
    let mut v_targ = vec![14.0; 20];
    v_targ.extend(vec![8.0; 20]);
    let control_pace = ControlSpec {
        kind: ControlKindSpec::PaceCar,
        constants: ConstantsSpec { c_max: Some(100.0), v_targ, ..Default::default() },
        settings: SettingsSpec { iterations: Some(200), ..Default::default() },
    };
    let control_signal = ControlSpec {
        kind: ControlKindSpec::SignalTiming,
        constants: ConstantsSpec { c1: Some(1.0), c2: Some(-1.0), ..Default::default() },
        settings: SettingsSpec { iterations: Some(120), ..Default::default() },
    };

    write_problem(&problems, "estimate_macro", &estimate_macro);
    write_problem(&problems, "estimate_hybrid", &estimate_hybrid);
    write_problem(&problems, "control_pace", &control_pace);
    write_problem(&problems, "control_signal", &control_signal);
}

fn write_problem<T: serde::Serialize>(dir: &Path, name: &str, spec: &T) {
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(spec).expect("serialize problem") + "\n";
    fs::write(&path, text).expect("write problem");
    println!("wrote {}", path.display());
}
