//! Solver-wide configuration shared by every module.

use serde::{Deserialize, Serialize};

/// How macro-to-micro interfaces turn accumulated flux into discrete vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConversionMode {
    /// Emit whenever the accumulated flux integral crosses an integer.
    #[default]
    Deterministic,
    /// Draw the per-step emission count from Poisson(rho*v*dt); the
    /// deterministic accumulator still advances to timestamp gradient
    /// intervals.
    Stochastic,
}

/// Global solver settings. Lane geometry and speed limits live on the lanes;
/// everything else that both solvers and the adjoint engine must agree on
/// lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Time step in seconds, constant for the whole run.
    pub dt: f64,
    /// Exponent of the equilibrium speed relation u_eq = u_max (1 - rho^gamma).
    pub gamma: f64,
    /// Velocity exponent delta of the car-following acceleration.
    #[serde(default = "default_delta")]
    pub delta_exponent: f64,
    /// Optional per-component magnitude cap applied to adjoint states during
    /// the reverse sweep; shields optimizers from near-shock blowups.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub conversion_mode: ConversionMode,
    /// Vehicle length used to convert between normalized density
    /// (cars per car length) and vehicle counts at conversion interfaces.
    #[serde(default = "default_vehicle_length")]
    pub mean_vehicle_length: f64,
    /// Named scalar parameters to differentiate with respect to.
    /// Currently understood: "u_max" (per macro lane).
    #[serde(default)]
    pub grad_params: Vec<String>,
    /// When set, emitted-vehicle weight gradients are spread over the density
    /// history of their accumulation interval. This is a smoothing surrogate:
    /// it does not correspond to a derivative of the discrete forward map, so
    /// finite differences will not reproduce it.
    #[serde(default)]
    pub emission_surrogate: bool,
}

fn default_delta() -> f64 {
    4.0
}

fn default_vehicle_length() -> f64 {
    5.0
}

impl SolverConfig {
    pub fn wants_u_max_gradient(&self) -> bool {
        self.grad_params.iter().any(|p| p == "u_max")
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.1,
            gamma: 0.5,
            delta_exponent: 4.0,
            grad_clip: None,
            rng_seed: 0,
            conversion_mode: ConversionMode::Deterministic,
            mean_vehicle_length: 5.0,
            grad_params: Vec::new(),
            emission_surrogate: false,
        }
    }
}
