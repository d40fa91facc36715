//! Problem descriptions shared by the control drivers.

use difftraffic_core::Scenario;

use crate::descent::DescentSettings;
use crate::OptimizeError;

/// Which episode-control problem a [`ControlProblem`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    PaceCar,
    SignalTiming,
}

/// Reward constants; each driver reads the fields relevant to its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardConstants {
    /// Per-frame, per-vehicle offset of the pace-car tracking reward.
    pub c_max: f64,
    /// Weight of the junction flow term of the signal reward.
    pub c1: f64,
    /// Weight of the queue term of the signal reward.
    pub c2: f64,
    /// Target speed per frame for the pace-car episode; its length sets the
    /// episode length.
    pub v_targ: Vec<f64>,
    /// Queue speed threshold in m/s; each lane defaults to a tenth of its
    /// speed limit.
    pub queue_threshold: Option<f64>,
}

impl Default for RewardConstants {
    fn default() -> Self {
        RewardConstants {
            c_max: 100.0,
            c1: 1.0,
            c2: -1.0,
            v_targ: Vec::new(),
            queue_threshold: None,
        }
    }
}

/// One episode-control problem. The control vector lives in the scenario's
/// controls block: the pace car's acceleration schedule or the signal's
/// per-phase green times, which also fix the episode length.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub kind: ControlKind,
    pub scenario: Scenario,
    pub constants: RewardConstants,
    pub settings: DescentSettings,
}

/// Number of solver steps spanning `seconds`, which must be an integer
/// multiple of `dt`.
pub(crate) fn integer_steps(seconds: f64, dt: f64) -> Result<usize, OptimizeError> {
    if !(seconds.is_finite() && dt > 0.0) {
        return Err(OptimizeError::BadProblem(format!(
            "cannot split {seconds} s into steps of {dt} s"
        )));
    }
    let raw = seconds / dt;
    let steps = raw.round();
    if (raw - steps).abs() > 1e-9 * steps.max(1.0) || steps < 1.0 {
        return Err(OptimizeError::BadProblem(format!(
            "{seconds} s is not a positive integer number of {dt} s steps"
        )));
    }
    Ok(steps as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_step_horizons_are_accepted() {
        assert_eq!(integer_steps(10.0, 0.1).unwrap(), 100);
        assert_eq!(integer_steps(45.0, 0.1).unwrap(), 450);
        assert_eq!(integer_steps(0.1, 0.1).unwrap(), 1);
    }

    #[test]
    fn fractional_or_empty_horizons_are_rejected() {
        assert!(integer_steps(1.05, 0.1).is_err());
        assert!(integer_steps(0.0, 0.1).is_err());
        assert!(integer_steps(-3.0, 0.1).is_err());
        assert!(integer_steps(f64::NAN, 0.1).is_err());
    }
}
