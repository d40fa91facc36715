//! Projected gradient search shared by the estimation and control drivers:
//! steps along the gradient with backtracking halving on rejection, doubling
//! on acceptance, and projection of every trial point onto the feasible set.

use std::path::Path;

use crate::OptimizeError;

/// Direction of improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Sense::Minimize => candidate < incumbent,
            Sense::Maximize => candidate > incumbent,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Sense::Minimize => -1.0,
            Sense::Maximize => 1.0,
        }
    }
}

/// Knobs for [`drive`].
#[derive(Debug, Clone, PartialEq)]
pub struct DescentSettings {
    /// Step size tried first.
    pub step0: f64,
    /// Maximum number of accepted iterations.
    pub iterations: usize,
    /// Giving-up threshold for the backtracking step size.
    pub min_step: f64,
    /// Cap on step-size growth.
    pub max_step: f64,
    /// Stop once the value is at least this good.
    pub value_target: Option<f64>,
    /// Stop once the gradient norm falls to or below this.
    pub grad_tol: f64,
}

impl Default for DescentSettings {
    fn default() -> Self {
        DescentSettings {
            step0: 1.0,
            iterations: 500,
            min_step: 1e-12,
            max_step: 1e6,
            value_target: None,
            grad_tol: 1e-15,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Objective value and gradient at one decision vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Outcome of a [`drive`] run: the best decision vector seen, its value, and
/// the accepted-iterate history starting with the initial point.
#[derive(Debug, Clone)]
pub struct DriveResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<IterationRecord>,
}

/// Projected gradient search. `project` maps any vector onto the feasible
/// set; `evaluate` returns the objective and its gradient at a feasible
/// point, or [`OptimizeError::Rollout`] to reject the point, which halves the
/// step and retries. Any other error aborts the search; so does a rejected or
/// non-finite starting point.
pub fn drive(
    x0: Vec<f64>,
    sense: Sense,
    settings: &DescentSettings,
    project: impl Fn(&mut [f64]),
    evaluate: impl Fn(&[f64]) -> Result<Evaluation, OptimizeError>,
) -> Result<DriveResult, OptimizeError> {
    if !(settings.step0 > 0.0 && settings.min_step > 0.0 && settings.max_step >= settings.step0) {
        return Err(OptimizeError::BadProblem(
            "step sizes must be positive with min_step <= step0 <= max_step".into(),
        ));
    }
    let mut x = x0;
    project(&mut x);
    let mut cur = match evaluate(&x) {
        Ok(e) if e.value.is_finite() => e,
        Ok(e) => {
            return Err(OptimizeError::InitialRollout(format!(
                "objective is {} at the starting point",
                e.value
            )))
        }
        Err(OptimizeError::Rollout(msg)) => return Err(OptimizeError::InitialRollout(msg)),
        Err(e) => return Err(e),
    };
    check_gradient_shape(&cur, x.len())?;

    let mut step = settings.step0;
    let mut best = x.clone();
    let mut best_value = cur.value;
    let mut history = vec![IterationRecord {
        iteration: 0,
        value: cur.value,
        grad_norm: norm(&cur.gradient),
        step,
    }];

    'outer: for iteration in 1..=settings.iterations {
        if let Some(target) = settings.value_target {
            if !sense.improves(target, cur.value) {
                break;
            }
        }
        if norm(&cur.gradient) <= settings.grad_tol {
            break;
        }
        loop {
            if step < settings.min_step {
                break 'outer;
            }
            let mut cand: Vec<f64> = x
                .iter()
                .zip(&cur.gradient)
                .map(|(xi, gi)| xi + sense.sign() * step * gi)
                .collect();
            project(&mut cand);
            match evaluate(&cand) {
                Ok(e) if e.value.is_finite() && sense.improves(e.value, cur.value) => {
                    check_gradient_shape(&e, cand.len())?;
                    x = cand;
                    cur = e;
                    step = (step * 2.0).min(settings.max_step);
                    break;
                }
                Ok(_) | Err(OptimizeError::Rollout(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if sense.improves(cur.value, best_value) {
            best_value = cur.value;
            best = x.clone();
        }
        history.push(IterationRecord {
            iteration,
            value: cur.value,
            grad_norm: norm(&cur.gradient),
            step,
        });
    }
    Ok(DriveResult { best, best_value, history })
}

fn check_gradient_shape(e: &Evaluation, dims: usize) -> Result<(), OptimizeError> {
    if e.gradient.len() == dims {
        Ok(())
    } else {
        Err(OptimizeError::ShapeMismatch(format!(
            "gradient has {} entries for {} decision variables",
            e.gradient.len(),
            dims
        )))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Write an iterate history as CSV with columns iteration, value, gradient
/// norm, and step size.
pub fn write_history_csv(path: &Path, history: &[IterationRecord]) -> std::io::Result<()> {
    let mut text = String::from("iteration,value,gradient_norm,step_size\n");
    for r in history {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.iteration, r.value, r.grad_norm, r.step
        ));
    }
    std::fs::write(path, text)
}
