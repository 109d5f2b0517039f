//! Model-free average-cost Q-learning for the Lagrangian MDP.
//!
//! The learner only ever sees `(s, a, s', realized CAE)` through [`Sampler`];
//! it never reads transition matrices or the channel probability. Each
//! update is
//!
//! ```text
//! q(s,a) <- (1 - alpha) q(s,a) + alpha (l + min_a' q(s',a') - min_a' q(s_ref,a'))
//! ```
//!
//! with `l = cae + lambda 1(a != 0)`. Two ways of choosing which `(s, a)` to
//! update are offered: generative sweeps over every pair in index order
//! (requires resetting the system to arbitrary states) and an on-trajectory
//! epsilon-greedy walk.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{transmission_cost, Action, StateSpace};
use crate::policy::{DeterministicPolicy, Policy};
use crate::rvi::{argmin_with_ties, S_REF};
use crate::search::{InnerSolution, InnerSolver};
use crate::sim::{run, SimConfig, SimMetrics, Simulator};

/// Black-box generative access to the system.
pub trait Sampler {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Draws `s' ~ P(. | s, a)` and returns it with the realized CAE.
    fn sample(&mut self, s: usize, a: Action) -> (usize, f64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    /// `values[s][a]`
    pub values: Vec<Vec<f64>>,
    pub s_ref: usize,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { values: vec![vec![0.0; n_actions]; n_states], s_ref: S_REF }
    }

    pub fn min(&self, s: usize) -> f64 {
        self.values[s].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn greedy_action(&self, s: usize) -> Action {
        Action(argmin_with_ties(&self.values[s]))
    }

    /// Greedy projection, idle on ties.
    pub fn greedy_policy(&self) -> DeterministicPolicy {
        DeterministicPolicy { actions: (0..self.values.len()).map(|s| self.greedy_action(s)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn update(&mut self, s: usize, a: Action, target: f64, alpha: f64) {
        let q = &mut self.values[s][a.0];
        *q = (1.0 - alpha) * *q + alpha * target;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    Constant { alpha: f64 },
    /// `a / (b + k)` at sweep (or episode) `k`, starting from 0.
    RobbinsMonro { a: f64, b: f64 },
}

impl LearningRate {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Self::Constant { alpha } => alpha,
            Self::RobbinsMonro { a, b } => a / (b + k as f64),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { alpha } => alpha > 0.0 && alpha < 1.0,
            Self::RobbinsMonro { a, b } => a > 0.0 && b > 0.0 && a / b < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("learning rate {self:?} must stay in (0,1)")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnMode {
    /// Every `(s, a)` once per sweep, in index order.
    Generative,
    /// Follow the system; an episode is `|S| |A|` steps and exploration is
    /// `epsilon / sqrt(episode)`.
    OnTrajectory { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub lambda: f64,
    /// Sweeps (generative) or episodes (on-trajectory).
    pub sweeps: usize,
    pub rate: LearningRate,
    pub seed: u64,
    /// Slots of the greedy-policy rollout that estimates the averages.
    pub eval_horizon: u64,
    pub mode: LearnMode,
    /// Evaluate the greedy policy every this many sweeps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            sweeps: 1000,
            rate: LearningRate::Constant { alpha: 1e-3 },
            seed: 0,
            eval_horizon: 100_000,
            mode: LearnMode::Generative,
            checkpoint_every: 0,
        }
    }
}

impl LearnConfig {
    fn check(&self) -> Result<()> {
        self.rate.check()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.sweeps == 0 || self.eval_horizon == 0 {
            return Err(Error::InvalidArgument("sweeps and eval_horizon must be positive".into()));
        }
        if let LearnMode::OnTrajectory { epsilon } = self.mode {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Rollout estimate of the greedy policy after some amount of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub sweep: usize,
    pub avg_lagrangian: f64,
    pub se_lagrangian: f64,
    pub avg_cae: f64,
    pub avg_freq: f64,
    /// `min_a q(s_ref, a)`, the learner's own gain estimate.
    pub min_q_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub lambda: f64,
    pub policy: DeterministicPolicy,
    pub q: QTable,
    pub avg_cae: f64,
    pub avg_freq: f64,
    pub avg_lagrangian: f64,
    pub se_cae: f64,
    pub se_freq: f64,
    pub se_lagrangian: f64,
    pub history: Vec<Checkpoint>,
}

fn target<S: Sampler>(q: &QTable, s: usize, a: Action, lambda: f64, sampler: &mut S) -> (f64, usize) {
    let (next, cae) = sampler.sample(s, a);
    let l = cae + lambda * transmission_cost(a);
    (l + q.min(next) - q.min(q.s_ref), next)
}

/// One generative sweep over every `(s, a)` in index order.
pub fn q_sweep<S: Sampler>(q: &mut QTable, lambda: f64, alpha: f64, sampler: &mut S) {
    for s in 0..sampler.n_states() {
        for a in 0..sampler.n_actions() {
            let (t, _) = target(q, s, Action(a), lambda, sampler);
            q.update(s, Action(a), t, alpha);
        }
    }
}

/// One on-trajectory episode from `start`; returns the final state.
pub fn q_episode<S: Sampler>(
    q: &mut QTable,
    lambda: f64,
    alpha: f64,
    epsilon: f64,
    start: usize,
    sampler: &mut S,
    explore: &mut ChaCha8Rng,
) -> usize {
    let na = sampler.n_actions();
    let mut s = start;
    for _ in 0..sampler.n_states() * na {
        let a = if explore.random::<f64>() < epsilon { Action(explore.random_range(0..na)) } else { q.greedy_action(s) };
        let (t, next) = target(q, s, a, lambda, sampler);
        q.update(s, a, t, alpha);
        s = next;
    }
    s
}

const EXPLORE_STREAM: u64 = 1 << 32;
const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn rollout(space: &StateSpace, q: &QTable, horizon: u64, seed: u64) -> Result<(DeterministicPolicy, SimMetrics)> {
    let policy = q.greedy_policy();
    let sim_policy = Policy::Deterministic(policy.clone()).into();
    let metrics = run(space, &sim_policy, &SimConfig::new(horizon, seed ^ EVAL_SEED_SALT))?;
    Ok((policy, metrics))
}

/// Trains on a simulator of `space` and estimates the greedy policy's
/// averages by rollout.
pub fn learn_lmdp(space: &StateSpace, config: &LearnConfig) -> Result<LearnResult> {
    config.check()?;
    let mut sampler = Simulator::new(space, config.seed);
    let mut explore = ChaCha8Rng::seed_from_u64(config.seed);
    explore.set_stream(EXPLORE_STREAM);
    let mut q = QTable::zeros(space.n_states(), space.n_actions());
    let mut history = Vec::new();
    let mut s = S_REF;
    for k in 0..config.sweeps {
        let alpha = config.rate.at(k);
        match config.mode {
            LearnMode::Generative => q_sweep(&mut q, config.lambda, alpha, &mut sampler),
            LearnMode::OnTrajectory { epsilon } => {
                let eps = epsilon / ((k + 1) as f64).sqrt();
                s = q_episode(&mut q, config.lambda, alpha, eps, s, &mut sampler, &mut explore);
            }
        }
        let done = k + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            let (_, m) = rollout(space, &q, config.eval_horizon, config.seed.wrapping_add(done as u64))?;
            let (l, se) = m.lagrangian(config.lambda);
            history.push(Checkpoint {
                sweep: done,
                avg_lagrangian: l,
                se_lagrangian: se,
                avg_cae: m.avg_cae,
                avg_freq: m.avg_freq,
                min_q_ref: q.min(q.s_ref),
            });
        }
    }
    let (policy, m) = rollout(space, &q, config.eval_horizon, config.seed)?;
    let (l, se_l) = m.lagrangian(config.lambda);
    Ok(LearnResult {
        lambda: config.lambda,
        policy,
        q,
        avg_cae: m.avg_cae,
        avg_freq: m.avg_freq,
        avg_lagrangian: l,
        se_cae: m.se_cae,
        se_freq: m.se_freq,
        se_lagrangian: se_l,
        history,
    })
}

/// Learned inner solver for the multiplier search. Each call trains from
/// scratch with a seed derived from the base seed and `lambda`.
pub struct QLearnSolver<'a> {
    pub space: &'a StateSpace,
    pub config: LearnConfig,
}

impl InnerSolver for QLearnSolver<'_> {
    fn solve(&self, lambda: f64) -> Result<InnerSolution> {
        let config = LearnConfig { lambda, seed: self.config.seed ^ lambda.to_bits(), ..self.config };
        let r = learn_lmdp(self.space, &config)?;
        Ok(InnerSolution {
            lambda,
            policy: r.policy,
            avg_cae: r.avg_cae,
            avg_freq: r.avg_freq,
            avg_lagrangian: r.avg_lagrangian,
            se_cae: r.se_cae,
            se_freq: r.se_freq,
            se_lagrangian: r.se_lagrangian,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Kernel;
    use crate::rvi::{solve_lmdp, RviOptions};
    use crate::scenario::{ChannelSpec, Scenario, SourceSpec};

    /// Replays a fixed cost for every draw and stays in state 0.
    struct Constant(f64);

    impl Sampler for Constant {
        fn n_states(&self) -> usize {
            2
        }
        fn n_actions(&self) -> usize {
            2
        }
        fn sample(&mut self, _s: usize, _a: Action) -> (usize, f64) {
            (0, self.0)
        }
    }

    #[test]
    fn single_update_arithmetic() {
        let mut q = QTable::zeros(2, 2);
        let (t, _) = target(&q, 1, Action(0), 0.0, &mut Constant(30.0));
        q.update(1, Action(0), t, 0.5);
        assert_eq!(q.values[1][0], 15.0);
    }

    #[test]
    fn zero_rate_leaves_table_unchanged() {
        let mut q = QTable::zeros(2, 2);
        q.values[1][1] = 4.0;
        let before = q.clone();
        q_sweep(&mut q, 1.0, 0.0, &mut Constant(30.0));
        assert_eq!(q, before);
    }

    fn deterministic_instance() -> Scenario {
        // a cycling source over a perfect channel: every draw is determined
        Scenario {
            sources: vec![SourceSpec {
                transition: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
                cae: vec![vec![0.0, 3.0, 1.0], vec![2.0, 0.0, 5.0], vec![4.0, 1.0, 0.0]],
                weight: 1.0,
            }],
            channel: ChannelSpec { p_success: 1.0, delay: 0 },
            f_max: 0.5,
        }
    }

    #[test]
    fn deterministic_sampler_reaches_rvi_fixed_point() {
        let sc = deterministic_instance();
        let space = StateSpace::new(&sc).unwrap();
        let kernel = Kernel::from_scenario(&sc).unwrap();
        let lambda = 1.5;
        let exact = solve_lmdp(&kernel, lambda, &RviOptions::with_epsilon(1e-12)).unwrap();
        let mut sampler = Simulator::new(&space, 0);
        let mut q = QTable::zeros(space.n_states(), space.n_actions());
        for _ in 0..4000 {
            q_sweep(&mut q, lambda, 0.5, &mut sampler);
        }
        assert!((q.min(S_REF) - exact.avg_lagrangian).abs() < 1e-6, "{} vs {}", q.min(S_REF), exact.avg_lagrangian);
        for s in 0..space.n_states() {
            assert!((q.min(s) - q.min(S_REF) - exact.h[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn perfect_channel_learns_zero_cae() {
        let sc = Scenario {
            sources: vec![SourceSpec::symmetric(
                3,
                0.3,
                vec![vec![0.0, 10.0, 30.0], vec![30.0, 0.0, 10.0], vec![10.0, 30.0, 0.0]],
                1.0,
            )],
            channel: ChannelSpec { p_success: 1.0, delay: 0 },
            f_max: 1.0,
        };
        let space = StateSpace::new(&sc).unwrap();
        let cfg = LearnConfig {
            sweeps: 300,
            rate: LearningRate::Constant { alpha: 0.1 },
            eval_horizon: 20_000,
            ..LearnConfig::default()
        };
        let r = learn_lmdp(&space, &cfg).unwrap();
        assert!(r.avg_cae <= 2.0 * r.se_cae.max(1e-12), "C = {} (se {})", r.avg_cae, r.se_cae);
    }

    #[test]
    fn seeded_learning_is_reproducible() {
        let sc = deterministic_instance();
        let space = StateSpace::new(&sc.with_channel(0.6, 1)).unwrap();
        for mode in [LearnMode::Generative, LearnMode::OnTrajectory { epsilon: 0.1 }] {
            let cfg = LearnConfig { sweeps: 30, eval_horizon: 1000, seed: 11, mode, ..LearnConfig::default() };
            assert_eq!(learn_lmdp(&space, &cfg).unwrap(), learn_lmdp(&space, &cfg).unwrap());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let space = StateSpace::new(&deterministic_instance()).unwrap();
        let bad = LearnConfig { rate: LearningRate::Constant { alpha: 1.0 }, ..LearnConfig::default() };
        assert!(learn_lmdp(&space, &bad).is_err());
        let bad = LearnConfig { sweeps: 0, ..LearnConfig::default() };
        assert!(learn_lmdp(&space, &bad).is_err());
        assert!(LearningRate::RobbinsMonro { a: 1.0, b: 2.0 }.check().is_ok());
        assert_eq!(LearningRate::RobbinsMonro { a: 1.0, b: 2.0 }.at(2), 0.25);
    }
}
