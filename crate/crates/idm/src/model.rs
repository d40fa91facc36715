//! Car-following acceleration and its exact partial derivatives.
//!
//! A vehicle at position p with speed v behind a leader h computes the
//! bumper-to-bumper gap dp = p_h - p - length_h, the approach rate
//! dv = v - v_h, the desired spacing
//! s_opt = s_min + v t_pref + v dv / (2 sqrt(a_max a_pref)), and accelerates
//! at a = a_max (1 - (v/v_targ)^delta - (s_opt/dp)^2). Without a leader the
//! interaction term drops.

use difftraffic_core::IdmParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdmError {
    #[error("vehicle {follower} reached vehicle {leader} (gap = {gap:.6})")]
    Collision { leader: u64, follower: u64, gap: f64 },
}

/// The leader as the follower sees it. For a phantom leader `length` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub p: f64,
    pub v: f64,
    pub length: f64,
}

pub fn acceleration(
    p: f64,
    v: f64,
    params: &IdmParams,
    leader: Option<Neighbor>,
    delta: f64,
) -> f64 {
    let free = 1.0 - (v / params.v_targ).powf(delta);
    match leader {
        None => params.a_max * free,
        Some(h) => {
            let dp = h.p - p - h.length;
            let s_opt = spacing(v, h.v, params);
            params.a_max * (free - (s_opt / dp) * (s_opt / dp))
        }
    }
}

fn spacing(v: f64, v_lead: f64, params: &IdmParams) -> f64 {
    params.s_min
        + v * params.t_pref
        + v * (v - v_lead) / (2.0 * (params.a_max * params.a_pref).sqrt())
}

/// Partial derivatives of the acceleration with respect to the follower's
/// and leader's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccelPartials {
    pub dp: f64,
    pub dv: f64,
    pub dp_lead: f64,
    pub dv_lead: f64,
}

pub fn acceleration_partials(
    p: f64,
    v: f64,
    params: &IdmParams,
    leader: Option<Neighbor>,
    delta: f64,
) -> AccelPartials {
    // d/dv of the free term: -delta v^(delta-1) / v_targ^delta.
    let free_dv = -delta * v.powf(delta - 1.0) / params.v_targ.powf(delta);
    match leader {
        None => AccelPartials { dv: params.a_max * free_dv, ..AccelPartials::default() },
        Some(h) => {
            let dp = h.p - p - h.length;
            let s_opt = spacing(v, h.v, params);
            let b = 2.0 * (params.a_max * params.a_pref).sqrt();
            let ds_dv = params.t_pref + (2.0 * v - h.v) / b;
            let ds_dv_lead = -v / b;
            // d/d(dp) of -(s/dp)^2 is +2 s^2/dp^3; dp falls with p and grows
            // with p_h.
            let by_gap = 2.0 * params.a_max * s_opt * s_opt / (dp * dp * dp);
            let by_spacing = -2.0 * params.a_max * s_opt / (dp * dp);
            AccelPartials {
                dp: -by_gap,
                dv: params.a_max * free_dv + by_spacing * ds_dv,
                dp_lead: by_gap,
                dv_lead: by_spacing * ds_dv_lead,
            }
        }
    }
}
