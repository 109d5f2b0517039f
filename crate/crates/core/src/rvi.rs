//! Relative value iteration for the Lagrangian MDP with per-step cost
//! `c(s,a,s') + lambda 1(a != 0)`.

use serde::{Deserialize, Serialize};

use crate::chain::{evaluate_policy, evaluate_policy_from};
use crate::error::{Error, Result};
use crate::mdp::{Action, Kernel};
use crate::policy::{DeterministicPolicy, Policy};

/// Reference state for normalization.
pub const S_REF: usize = 0;

/// Relative slack under which two action values count as tied. Ties go to the
/// lowest action index, so idle wins.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// `||v^k - v^{k-1}||_inf < epsilon`
    SupNorm,
    /// `max(v^k - v^{k-1}) - min(v^k - v^{k-1}) < epsilon`
    Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    /// Damp only when some source has a zero self-transition probability.
    Auto,
    Off,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub stopping: StoppingRule,
    pub damping: Damping,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self { epsilon: 1e-2, max_iterations: 1_000_000, stopping: StoppingRule::SupNorm, damping: Damping::Auto }
    }
}

impl RviOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub lambda: f64,
    pub policy: DeterministicPolicy,
    /// Relative values, `h[S_REF] = 0`.
    pub h: Vec<f64>,
    pub avg_lagrangian: f64,
    pub avg_cae: f64,
    pub avg_freq: f64,
    pub iterations: usize,
    /// False when the extracted policy has several recurrent classes; the
    /// averages are then those seen from `S_REF`.
    pub unichain: bool,
}

/// Index of the smallest value, preferring lower indices within [`TIE_TOL`].
pub fn argmin_with_ties(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOL * best.abs().max(1.0);
    values.iter().position(|&v| v <= best + slack).unwrap_or(0)
}

fn q_value(kernel: &Kernel, s: usize, a: Action, lambda: f64, values: &[f64]) -> f64 {
    let future: f64 = kernel.support(s, a).iter().map(|&(t, p)| p * values[t]).sum();
    kernel.expected_lagrangian(s, a, lambda) + future
}

/// Greedy policy with respect to relative values `h`.
pub fn greedy_policy(kernel: &Kernel, lambda: f64, h: &[f64]) -> DeterministicPolicy {
    let na = kernel.n_actions();
    let mut q = vec![0.0; na];
    let actions = (0..kernel.n_states())
        .map(|s| {
            for (a, slot) in q.iter_mut().enumerate() {
                *slot = q_value(kernel, s, Action(a), lambda, h);
            }
            Action(argmin_with_ties(&q))
        })
        .collect();
    DeterministicPolicy { actions }
}

/// `max_s |gain + h(s) - min_a sum_{s'} P(s'|s,a)(l + h(s'))|`.
pub fn bellman_residual(kernel: &Kernel, lambda: f64, gain: f64, h: &[f64]) -> f64 {
    (0..kernel.n_states())
        .map(|s| {
            let best = (0..kernel.n_actions())
                .map(|a| q_value(kernel, s, Action(a), lambda, h))
                .fold(f64::INFINITY, f64::min);
            (gain + h[s] - best).abs()
        })
        .fold(0.0, f64::max)
}

fn needs_damping(kernel: &Kernel) -> bool {
    kernel
        .space()
        .scenario()
        .sources
        .iter()
        .any(|src| (0..src.n_states()).any(|i| src.transition[i][i] == 0.0))
}

/// Solves the Lagrangian MDP at `lambda` and evaluates the extracted policy.
pub fn solve_lmdp(kernel: &Kernel, lambda: f64, opts: &RviOptions) -> Result<SolveResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", opts.epsilon)));
    }
    let n = kernel.n_states();
    let na = kernel.n_actions();
    let damped = match opts.damping {
        Damping::Auto => needs_damping(kernel),
        Damping::On => true,
        Damping::Off => false,
    };
    // with P' = tau P + (1 - tau) I and the cost unchanged, the gain is the
    // same and the relative values scale by 1/tau
    let tau = if damped { 0.5 } else { 1.0 };

    let mut v = vec![0.0; n];
    let mut rel = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    loop {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations, last_change });
        }
        iterations += 1;
        for (s, slot) in next.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for a in 0..na {
                let a = Action(a);
                let future: f64 = kernel.support(s, a).iter().map(|&(t, p)| p * rel[t]).sum();
                let q = kernel.expected_lagrangian(s, a, lambda) + tau * future + (1.0 - tau) * rel[s];
                best = best.min(q);
            }
            *slot = best;
        }
        let (mut hi, mut lo, mut sup) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
        for (a, b) in next.iter().zip(&v) {
            let d = a - b;
            hi = hi.max(d);
            lo = lo.min(d);
            sup = sup.max(d.abs());
        }
        last_change = match opts.stopping {
            StoppingRule::SupNorm => sup,
            StoppingRule::Span => hi - lo,
        };
        std::mem::swap(&mut v, &mut next);
        let anchor = v[S_REF];
        for (r, x) in rel.iter_mut().zip(&v) {
            *r = x - anchor;
        }
        if last_change < opts.epsilon {
            break;
        }
    }
    let h: Vec<f64> = rel.iter().map(|x| tau * x).collect();
    let policy = greedy_policy(kernel, lambda, &h);
    let wrapped = Policy::Deterministic(policy);
    let (eval, unichain) = match evaluate_policy(kernel, &wrapped, lambda) {
        Ok(e) => (e, true),
        Err(Error::Multichain { .. }) => (evaluate_policy_from(kernel, &wrapped, lambda, S_REF)?, false),
        Err(e) => return Err(e),
    };
    let Policy::Deterministic(policy) = wrapped else { unreachable!() };
    Ok(SolveResult {
        lambda,
        policy,
        h,
        avg_lagrangian: eval.avg_lagrangian,
        avg_cae: eval.avg_cae,
        avg_freq: eval.avg_freq,
        iterations,
        unichain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{reference_scenario, ChannelSpec, Scenario, SourceSpec};

    fn perfect_single() -> Scenario {
        Scenario {
            sources: vec![SourceSpec::symmetric(
                3,
                0.4,
                vec![vec![0.0, 10.0, 30.0], vec![30.0, 0.0, 10.0], vec![10.0, 30.0, 0.0]],
                1.0,
            )],
            channel: ChannelSpec { p_success: 1.0, delay: 0 },
            f_max: 1.0,
        }
    }

    #[test]
    fn argmin_prefers_idle_on_ties() {
        assert_eq!(argmin_with_ties(&[1.0, 1.0, 0.5]), 2);
        assert_eq!(argmin_with_ties(&[1.0, 1.0 - 1e-12, 2.0]), 0);
        assert_eq!(argmin_with_ties(&[3.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn perfect_channel_reaches_zero_cae() {
        let k = Kernel::from_scenario(&perfect_single()).unwrap();
        let r = solve_lmdp(&k, 0.0, &RviOptions::default()).unwrap();
        assert!(r.avg_cae.abs() < 1e-9);
        assert_eq!(r.h[S_REF], 0.0);
    }

    #[test]
    fn unconstrained_frequency_on_reference_instance() {
        let k = Kernel::from_scenario(&reference_scenario(0.4, 0, 0.4)).unwrap();
        let r = solve_lmdp(&k, 0.0, &RviOptions::default()).unwrap();
        assert!((r.avg_freq - 0.8185).abs() < 5e-4, "F0 = {}", r.avg_freq);
        assert!(r.unichain);
        assert!((r.avg_lagrangian - r.avg_cae).abs() < 1e-12);
    }

    #[test]
    fn large_multiplier_never_transmits() {
        let k = Kernel::from_scenario(&reference_scenario(0.4, 0, 0.4)).unwrap();
        let r = solve_lmdp(&k, 100.0, &RviOptions::default()).unwrap();
        assert_eq!(r.avg_freq, 0.0);
        assert!(!r.unichain);
        assert!((r.avg_cae - 80.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_runs() {
        let k = Kernel::from_scenario(&reference_scenario(0.5, 1, 0.4)).unwrap();
        let a = solve_lmdp(&k, 7.5, &RviOptions::default()).unwrap();
        let b = solve_lmdp(&k, 7.5, &RviOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bellman_residual_is_small() {
        let k = Kernel::from_scenario(&reference_scenario(0.4, 0, 0.4)).unwrap();
        for lambda in [0.0, 4.0, 12.0, 30.0] {
            let opts = RviOptions::default();
            let r = solve_lmdp(&k, lambda, &opts).unwrap();
            let res = bellman_residual(&k, lambda, r.avg_lagrangian, &r.h);
            assert!(res <= 10.0 * opts.epsilon, "lambda {lambda}: residual {res}");
        }
    }

    #[test]
    fn damping_preserves_solution() {
        // zero self-transitions force the damped iteration
        let sc = Scenario {
            sources: vec![SourceSpec {
                transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                cae: vec![vec![0.0, 5.0], vec![2.0, 0.0]],
                weight: 1.0,
            }],
            channel: ChannelSpec { p_success: 0.7, delay: 0 },
            f_max: 0.5,
        };
        let k = Kernel::from_scenario(&sc).unwrap();
        let opts = RviOptions { epsilon: 1e-10, ..RviOptions::default() };
        let r = solve_lmdp(&k, 1.0, &opts).unwrap();
        assert!(bellman_residual(&k, 1.0, r.avg_lagrangian, &r.h) < 1e-8);
        let span = RviOptions { stopping: StoppingRule::Span, ..opts };
        let r2 = solve_lmdp(&k, 1.0, &span).unwrap();
        assert!((r.avg_lagrangian - r2.avg_lagrangian).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_arguments() {
        let k = Kernel::from_scenario(&perfect_single()).unwrap();
        assert!(solve_lmdp(&k, -1.0, &RviOptions::default()).is_err());
        assert!(solve_lmdp(&k, 1.0, &RviOptions::with_epsilon(0.0)).is_err());
        let capped = RviOptions { max_iterations: 1, epsilon: 1e-12, ..RviOptions::default() };
        assert!(matches!(solve_lmdp(&k, 1.0, &capped), Err(Error::NonConvergence { .. })));
    }
}
