//! Online drift-plus-penalty scheduling.
//!
//! A virtual queue `z` accumulates transmissions in excess of the budget;
//! each slot picks the action minimizing
//! `z (1(a != 0) - f_max) + v * E[CAE | s, a]`.
//!
//! Unlike the learner, this rule needs the source transition matrices, the
//! CAE matrices and the channel success probability: the expected one-step
//! CAE is computed in closed form from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{transmission_cost, Action, StateSpace, SystemState};
use crate::rvi::argmin_with_ties;

/// Default weight on the CAE term.
pub const DEFAULT_V: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DppState {
    /// Virtual queue backlog.
    pub z: f64,
    /// Weight on expected CAE.
    pub v: f64,
}

impl DppState {
    pub fn new(v: f64) -> Result<Self> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("V must be finite and >= 0, got {v}")));
        }
        Ok(Self { z: 0.0, v })
    }

    /// Advances the queue after taking `a`.
    pub fn update(&mut self, a: Action, f_max: f64) {
        self.z = queue_update(self.z, a, f_max);
    }
}

/// `max(z - f_max, 0) + 1(a != 0)`.
pub fn queue_update(z: f64, a: Action, f_max: f64) -> f64 {
    (z - f_max).max(0.0) + transmission_cost(a)
}

/// Constant of the quadratic drift bound, `(1 + f_max^2) / 2`. Reported for
/// diagnostics only; the decision rule never uses it.
pub fn drift_constant(f_max: f64) -> f64 {
    0.5 * (1.0 + f_max * f_max)
}

/// Closed-form `E[c(s, a, s') | s, a]`.
pub fn expected_one_step_cae(space: &StateSpace, s: &SystemState, a: Action) -> f64 {
    let sc = space.scenario();
    let ps = sc.channel.p_success;
    let delayed = sc.channel.delay == 1;
    sc.sources
        .iter()
        .enumerate()
        .map(|(m, src)| {
            let (i, j) = (s.0[m].x, s.0[m].xhat);
            let sent = a.source() == Some(m);
            let delta = &src.cae;
            let value = if !delayed {
                if sent {
                    delta[i][j] * (1.0 - ps)
                } else {
                    delta[i][j]
                }
            } else {
                let q = &src.transition[i];
                let stale: f64 = (0..q.len()).filter(|&k| k != j).map(|k| delta[k][j] * q[k]).sum();
                if sent {
                    let fresh: f64 = (0..q.len()).filter(|&k| k != i).map(|k| delta[k][i] * q[k]).sum();
                    fresh * ps + stale * (1.0 - ps)
                } else {
                    stale
                }
            };
            src.weight * value
        })
        .sum()
}

/// Per-slot decision; ties go to idle, then to the lowest source index.
pub fn dpp_decide(space: &StateSpace, s: &SystemState, dpp: &DppState, f_max: f64) -> Action {
    let objective: Vec<f64> = space
        .actions()
        .map(|a| dpp.z * (transmission_cost(a) - f_max) + dpp.v * expected_one_step_cae(space, s, a))
        .collect();
    Action(argmin_with_ties(&objective))
}
