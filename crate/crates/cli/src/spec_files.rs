//! JSON problem files consumed by the estimate and control commands. Every
//! field of the underlying solver settings is optional here, so a problem
//! file states only what it overrides.

use std::collections::BTreeMap;

use difftraffic_core::CellState;
use difftraffic_optimize::{DescentSettings, RewardConstants};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    /// Observation horizon in seconds; must be a whole number of steps.
    pub horizon_seconds: f64,
    /// Observed final macro cells per lane. When absent, the scenario's own
    /// initial state is simulated forward to synthesize the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<BTreeMap<u64, Vec<CellState>>>,
    /// How to scramble the initial guess away from the scenario's cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize_init: Option<RandomizeSpec>,
    #[serde(default)]
    pub settings: SettingsSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizeSpec {
    pub seed: u64,
    /// Density range, low then high.
    pub rho: [f64; 2],
    /// Velocity as a fraction of the equilibrium speed, low then high.
    pub velocity_fraction: [f64; 2],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
}

impl SettingsSpec {
    pub fn resolve(&self) -> DescentSettings {
        let d = DescentSettings::default();
        DescentSettings {
            step0: self.step0.unwrap_or(d.step0),
            iterations: self.iterations.unwrap_or(d.iterations),
            min_step: self.min_step.unwrap_or(d.min_step),
            max_step: self.max_step.unwrap_or(d.max_step),
            value_target: self.value_target.or(d.value_target),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub kind: ControlKindSpec,
    #[serde(default)]
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub settings: SettingsSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKindSpec {
    PaceCar,
    SignalTiming,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_threshold: Option<f64>,
    /// Per-frame target speed for the pace reward; empty means the reward
    /// engine's default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub v_targ: Vec<f64>,
}

impl ConstantsSpec {
    pub fn resolve(&self) -> RewardConstants {
        let d = RewardConstants::default();
        RewardConstants {
            c_max: self.c_max.unwrap_or(d.c_max),
            c1: self.c1.unwrap_or(d.c1),
            c2: self.c2.unwrap_or(d.c2),
            v_targ: self.v_targ.clone(),
            queue_threshold: self.queue_threshold.or(d.queue_threshold),
        }
    }
}
