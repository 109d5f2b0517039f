//! Stationary policies and the policy JSON document.
//!
//! ```json
//! {"kind":"deterministic","actions":[0,1,2,...]}
//! {"kind":"randomized","rows":[[0.6,0.2,0.2],...]}
//! {"kind":"mixture","pi_minus":{"actions":[...]},"pi_plus":{"actions":[...]},"mu":0.24}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Action;

const ROW_TOL: f64 = 1e-9;

/// State index to action table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<Action>,
}

impl DeterministicPolicy {
    pub fn constant(n_states: usize, a: Action) -> Self {
        Self { actions: vec![a; n_states] }
    }

    pub fn action(&self, s: usize) -> Action {
        self.actions[s]
    }
}

/// State index to action distribution; `rows[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedPolicy {
    pub rows: Vec<Vec<f64>>,
}

/// Randomization between an infeasible and a feasible deterministic policy.
/// `mu` is the weight on `pi_minus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub pi_minus: DeterministicPolicy,
    pub pi_plus: DeterministicPolicy,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Policy {
    Deterministic(DeterministicPolicy),
    Randomized(RandomizedPolicy),
    Mixture(MixturePolicy),
}

/// A policy that induces a single time-homogeneous chain.
#[derive(Debug, Clone, Copy)]
pub enum Stationary<'a> {
    Deterministic(&'a DeterministicPolicy),
    Randomized(&'a RandomizedPolicy),
}

impl Stationary<'_> {
    pub fn n_states(&self) -> usize {
        match self {
            Self::Deterministic(p) => p.actions.len(),
            Self::Randomized(p) => p.rows.len(),
        }
    }

    /// Actions with positive probability in state `s`.
    pub fn action_dist(&self, s: usize) -> Vec<(Action, f64)> {
        match self {
            Self::Deterministic(p) => vec![(p.actions[s], 1.0)],
            Self::Randomized(p) => p.rows[s]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(a, &w)| (Action(a), w))
                .collect(),
        }
    }

    /// `f^pi(s)`: probability of transmitting in `s`.
    pub fn transmit_prob(&self, s: usize) -> f64 {
        match self {
            Self::Deterministic(p) => {
                if p.actions[s].is_idle() {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Randomized(p) => 1.0 - p.rows[s][0],
        }
    }
}

impl Policy {
    /// Stationary components with their weights. A mixture yields two.
    pub fn components(&self) -> Vec<(f64, Stationary<'_>)> {
        match self {
            Self::Deterministic(p) => vec![(1.0, Stationary::Deterministic(p))],
            Self::Randomized(p) => vec![(1.0, Stationary::Randomized(p))],
            Self::Mixture(m) => vec![
                (m.mu, Stationary::Deterministic(&m.pi_minus)),
                (1.0 - m.mu, Stationary::Deterministic(&m.pi_plus)),
            ],
        }
    }

    pub fn n_states(&self) -> usize {
        self.components()[0].1.n_states()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Deterministic(_) => "deterministic",
            Self::Randomized(_) => "randomized",
            Self::Mixture(_) => "mixture",
        }
    }

    /// Checks dimensions, action ranges, row sums and `mu`.
    pub fn check(&self, n_states: usize, n_actions: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let check_det = |p: &DeterministicPolicy| -> Result<()> {
            if p.actions.len() != n_states {
                return bad(format!("policy covers {} states, expected {}", p.actions.len(), n_states));
            }
            if let Some(a) = p.actions.iter().find(|a| a.0 >= n_actions) {
                return bad(format!("action {} out of range 0..{}", a.0, n_actions));
            }
            Ok(())
        };
        match self {
            Self::Deterministic(p) => check_det(p),
            Self::Randomized(p) => {
                if p.rows.len() != n_states {
                    return bad(format!("policy covers {} states, expected {}", p.rows.len(), n_states));
                }
                for (s, row) in p.rows.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.len() != n_actions || row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                        return bad(format!("row {} is not a distribution over {} actions", s, n_actions));
                    }
                }
                Ok(())
            }
            Self::Mixture(m) => {
                if !(0.0..=1.0).contains(&m.mu) {
                    return bad(format!("mixture weight {} outside [0,1]", m.mu));
                }
                check_det(&m.pi_minus)?;
                check_det(&m.pi_plus)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

impl From<DeterministicPolicy> for Policy {
    fn from(p: DeterministicPolicy) -> Self {
        Self::Deterministic(p)
    }
}

impl From<RandomizedPolicy> for Policy {
    fn from(p: RandomizedPolicy) -> Self {
        Self::Randomized(p)
    }
}

impl From<MixturePolicy> for Policy {
    fn from(p: MixturePolicy) -> Self {
        Self::Mixture(p)
    }
}
