//! Joint state space, transition kernel and instantaneous costs.
//!
//! The state of subsystem `m` is the pair `(x, xhat)`: the source state and the
//! receiver's estimate. With zero delay `xhat` is the estimate held *before*
//! this slot's transmission resolves, with one delay it is the estimate in
//! force during the slot. In both cases the successor's `xhat` is the estimate
//! produced by the action, so the per-subsystem kernel is the same:
//!
//! | action  | state     | successor | probability     |
//! |---------|-----------|-----------|-----------------|
//! | `m`     | `(i, j)`  | `(k, i)`  | `Q[i][k] p_s`   |
//! | `m`     | `(i, j)`  | `(k, j)`  | `Q[i][k] (1-p_s)` |
//! | `m`     | `(i, i)`  | `(k, i)`  | `Q[i][k]`       |
//! | `!= m`  | `(i, j)`  | `(k, j)`  | `Q[i][k]`       |
//!
//! and the joint kernel is the product over subsystems.
//!
//! Cost convention: the actuation error is charged against the estimate the
//! receiver holds after the action, which is `xhat(s')`. With zero delay it is
//! compared to the source state `x(s)` the sample was taken from; with one
//! delay the receiver is a slot behind, so it is compared to `x(s')`. This is
//! the only reading under which `c(s, a, s')` is a function of the two states
//! and the action alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Default ceiling on the number of joint states.
pub const DEFAULT_STATE_CEILING: u128 = 10_000_000;

/// Ceiling on `|S| * |A| * |S|` for the dense kernel table.
pub const DENSE_KERNEL_CEILING: usize = 50_000_000;

/// `0` is idle, `m >= 1` samples source `m` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub usize);

impl Action {
    pub const IDLE: Action = Action(0);

    /// Action that samples the 0-based source `m`.
    pub fn sample(m: usize) -> Self {
        Action(m + 1)
    }

    pub fn is_idle(self) -> bool {
        self.0 == 0
    }

    /// 0-based index of the sampled source.
    pub fn source(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

/// `(x, xhat)` of one subsystem, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubState {
    pub x: usize,
    pub xhat: usize,
}

impl SubState {
    pub fn synced(self) -> bool {
        self.x == self.xhat
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState(pub Vec<SubState>);

impl SystemState {
    /// All sources synced at their first state: the codec's index 0.
    pub fn all_synced_first(n_sources: usize) -> Self {
        SystemState(vec![SubState { x: 0, xhat: 0 }; n_sources])
    }
}

/// Mixed-radix codec over the joint state space. Digits are
/// `(x_1, xhat_1, ..., x_M, xhat_M)` with `x_1` most significant.
#[derive(Debug, Clone)]
pub struct StateSpace {
    scenario: Scenario,
    radix: Vec<usize>,
    // place value of x_m; xhat_m's place value is stride[m] / radix[m]
    stride: Vec<usize>,
    n_states: usize,
}

impl StateSpace {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Self::with_ceiling(scenario, DEFAULT_STATE_CEILING)
    }

    pub fn with_ceiling(scenario: &Scenario, ceiling: u128) -> Result<Self> {
        let radix: Vec<usize> = scenario.sources.iter().map(|s| s.n_states()).collect();
        let total: u128 = radix.iter().map(|&n| (n as u128) * (n as u128)).product();
        if total > ceiling {
            return Err(Error::Capacity { states: total, ceiling });
        }
        let mut stride = vec![0; radix.len()];
        let mut place = 1usize;
        for m in (0..radix.len()).rev() {
            // xhat_m is less significant than x_m
            place *= radix[m];
            stride[m] = place;
            place *= radix[m];
        }
        Ok(Self { scenario: scenario.clone(), radix, stride, n_states: total as usize })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.radix.len() + 1
    }

    pub fn n_sources(&self) -> usize {
        self.radix.len()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> {
        (0..self.n_actions()).map(Action)
    }

    pub fn encode(&self, s: &SystemState) -> usize {
        s.0.iter()
            .enumerate()
            .map(|(m, sub)| sub.x * self.stride[m] + sub.xhat * (self.stride[m] / self.radix[m]))
            .sum()
    }

    pub fn decode(&self, index: usize) -> SystemState {
        SystemState((0..self.radix.len()).map(|m| self.substate(index, m)).collect())
    }

    /// Subsystem `m`'s pair read directly from a joint index.
    pub fn substate(&self, index: usize, m: usize) -> SubState {
        let n = self.radix[m];
        let low = self.stride[m] / n;
        SubState { x: (index / self.stride[m]) % n, xhat: (index / low) % n }
    }

    /// `P^m(next | cur, a)` for one subsystem.
    pub fn subsystem_prob(&self, m: usize, cur: SubState, a: Action, next: SubState) -> f64 {
        let q = self.scenario.sources[m].transition[cur.x][next.x];
        if a.source() == Some(m) && !cur.synced() {
            let ps = self.scenario.channel.p_success;
            let mut p = 0.0;
            if next.xhat == cur.x {
                p += q * ps;
            }
            if next.xhat == cur.xhat {
                p += q * (1.0 - ps);
            }
            p
        } else if next.xhat == cur.xhat {
            q
        } else {
            0.0
        }
    }

    /// Nonzero-probability successors of subsystem `m`, in a fixed order.
    pub fn subsystem_successors(&self, m: usize, cur: SubState, a: Action) -> Vec<(SubState, f64)> {
        let src = &self.scenario.sources[m];
        let ps = self.scenario.channel.p_success;
        let mut out = Vec::with_capacity(2 * src.n_states());
        for (k, &q) in src.transition[cur.x].iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            if a.source() == Some(m) && !cur.synced() {
                if ps > 0.0 {
                    out.push((SubState { x: k, xhat: cur.x }, q * ps));
                }
                if ps < 1.0 {
                    out.push((SubState { x: k, xhat: cur.xhat }, q * (1.0 - ps)));
                }
            } else {
                out.push((SubState { x: k, xhat: cur.xhat }, q));
            }
        }
        out
    }

    /// `P(s' | s, a)` as the product of subsystem kernels.
    pub fn transition_prob(&self, s: &SystemState, a: Action, next: &SystemState) -> f64 {
        s.0.iter()
            .zip(&next.0)
            .enumerate()
            .map(|(m, (&cur, &nxt))| self.subsystem_prob(m, cur, a, nxt))
            .product()
    }

    /// Joint successors `(index, probability)` of `(s, a)`.
    pub fn successors(&self, s: usize, a: Action) -> Vec<(usize, f64)> {
        let mut acc = vec![(0usize, 1.0f64)];
        for m in 0..self.radix.len() {
            let low = self.stride[m] / self.radix[m];
            let subs = self.subsystem_successors(m, self.substate(s, m), a);
            let mut next = Vec::with_capacity(acc.len() * subs.len());
            for &(idx, p) in &acc {
                for &(sub, q) in &subs {
                    next.push((idx + sub.x * self.stride[m] + sub.xhat * low, p * q));
                }
            }
            acc = next;
        }
        acc
    }

    /// Realized actuation error `c(s, a, s')`.
    pub fn instantaneous_cae(&self, s: &SystemState, _a: Action, next: &SystemState) -> f64 {
        let delay = self.scenario.channel.delay;
        self.scenario
            .sources
            .iter()
            .enumerate()
            .map(|(m, src)| {
                let xhat = next.0[m].xhat;
                let x = if delay == 0 { s.0[m].x } else { next.0[m].x };
                src.weight * src.cae[x][xhat]
            })
            .sum()
    }

    /// Index-based variant of [`Self::instantaneous_cae`].
    pub fn cae_by_index(&self, s: usize, next: usize) -> f64 {
        let delay = self.scenario.channel.delay;
        self.scenario
            .sources
            .iter()
            .enumerate()
            .map(|(m, src)| {
                let after = self.substate(next, m);
                let x = if delay == 0 { self.substate(s, m).x } else { after.x };
                src.weight * src.cae[x][after.xhat]
            })
            .sum()
    }

    pub fn lagrangian_cost(&self, s: &SystemState, a: Action, next: &SystemState, lambda: f64) -> f64 {
        self.instantaneous_cae(s, a, next) + lambda * transmission_cost(a)
    }
}

/// `f(s, a) = 1(a != 0)`.
pub fn transmission_cost(a: Action) -> f64 {
    if a.is_idle() {
        0.0
    } else {
        1.0
    }
}

/// Dense kernel `P[s][a][s']` plus the expected one-step CAE `cbar[s][a]`,
/// built once per scenario.
#[derive(Debug, Clone)]
pub struct Kernel {
    space: StateSpace,
    prob: Vec<f64>,
    support: Vec<Vec<(usize, f64)>>,
    expected_cae: Vec<f64>,
}

impl Kernel {
    pub fn build(space: &StateSpace) -> Result<Self> {
        let n = space.n_states();
        let na = space.n_actions();
        let entries = n.saturating_mul(n).saturating_mul(na);
        if entries > DENSE_KERNEL_CEILING {
            return Err(Error::Capacity { states: entries as u128, ceiling: DENSE_KERNEL_CEILING as u128 });
        }
        let mut prob = vec![0.0; entries];
        let mut support = Vec::with_capacity(n * na);
        let mut expected_cae = vec![0.0; n * na];
        for s in 0..n {
            for a in space.actions() {
                let row = (s * na + a.0) * n;
                let succ = space.successors(s, a);
                let mut cbar = 0.0;
                for &(t, p) in &succ {
                    prob[row + t] += p;
                    cbar += p * space.cae_by_index(s, t);
                }
                expected_cae[s * na + a.0] = cbar;
                support.push(succ);
            }
        }
        Ok(Self { space: space.clone(), prob, support, expected_cae })
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        Self::build(&StateSpace::new(scenario)?)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n_states(&self) -> usize {
        self.space.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.space.n_actions()
    }

    pub fn prob(&self, s: usize, a: Action, next: usize) -> f64 {
        self.prob[(s * self.n_actions() + a.0) * self.n_states() + next]
    }

    /// Dense row `P(. | s, a)`.
    pub fn row(&self, s: usize, a: Action) -> &[f64] {
        let n = self.n_states();
        let start = (s * self.n_actions() + a.0) * n;
        &self.prob[start..start + n]
    }

    /// Sparse successors of `(s, a)`.
    pub fn support(&self, s: usize, a: Action) -> &[(usize, f64)] {
        &self.support[s * self.n_actions() + a.0]
    }

    /// `sum_{s'} P(s'|s,a) c(s,a,s')`.
    pub fn expected_cae(&self, s: usize, a: Action) -> f64 {
        self.expected_cae[s * self.n_actions() + a.0]
    }

    /// Expected Lagrangian one-step cost.
    pub fn expected_lagrangian(&self, s: usize, a: Action, lambda: f64) -> f64 {
        self.expected_cae(s, a) + lambda * transmission_cost(a)
    }
}
