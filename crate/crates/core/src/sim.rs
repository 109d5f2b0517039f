//! Slot-by-slot simulation of sources, channel and receiver under any policy.
//!
//! Randomness comes from one ChaCha8 seed split into independent streams:
//! policy randomization, the channel, and one stream per source. Changing how
//! often one component draws never shifts the others.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::sample_action;
use crate::dpp::{dpp_decide, drift_constant, DppState};
use crate::error::{Error, Result};
use crate::mdp::{transmission_cost, Action, StateSpace, SubState, SystemState};
use crate::policy::{Policy, Stationary};
use crate::qlearn::Sampler;

/// Number of batches behind every standard error.
pub const BATCHES: u64 = 20;

const POLICY_STREAM: u64 = 0;
const CHANNEL_STREAM: u64 = 1;
const SOURCE_STREAM_BASE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: SystemState,
    /// `None` when idle; the channel is only used when transmitting.
    pub success: Option<bool>,
    pub cae: f64,
    pub f: f64,
}

/// Sources plus channel; owns the environment's random streams.
pub struct Simulator<'a> {
    space: &'a StateSpace,
    sources: Vec<ChaCha8Rng>,
    channel: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    pub fn new(space: &'a StateSpace, seed: u64) -> Self {
        let sources = (0..space.n_sources() as u64).map(|m| stream(seed, SOURCE_STREAM_BASE + m)).collect();
        Self { space, sources, channel: stream(seed, CHANNEL_STREAM) }
    }

    pub fn space(&self) -> &StateSpace {
        self.space
    }

    /// Advances every source, resolves the channel for the sampled source and
    /// updates its estimate.
    pub fn step(&mut self, s: &SystemState, a: Action) -> Step {
        let sc = self.space.scenario();
        let delay = sc.channel.delay;
        let success = (!a.is_idle()).then(|| self.channel.random::<f64>() < sc.channel.p_success);
        let mut cae = 0.0;
        let next = s
            .0
            .iter()
            .zip(&sc.sources)
            .zip(self.sources.iter_mut())
            .enumerate()
            .map(|(m, ((cur, src), rng))| {
                let x = sample_action(&src.transition[cur.x], rng.random::<f64>()).0;
                let xhat = if a.source() == Some(m) && success == Some(true) { cur.x } else { cur.xhat };
                let err_state = if delay == 0 { cur.x } else { x };
                cae += src.weight * src.cae[err_state][xhat];
                SubState { x, xhat }
            })
            .collect();
        Step { next: SystemState(next), success, cae, f: transmission_cost(a) }
    }
}

impl Sampler for Simulator<'_> {
    fn n_states(&self) -> usize {
        self.space.n_states()
    }

    fn n_actions(&self) -> usize {
        self.space.n_actions()
    }

    fn sample(&mut self, s: usize, a: Action) -> (usize, f64) {
        let st = self.step(&self.space.decode(s), a);
        (self.space.encode(&st.next), st.cae)
    }
}

/// What drives the actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimPolicy {
    Stationary { policy: Policy },
    Dpp { v: f64 },
}

impl From<Policy> for SimPolicy {
    fn from(policy: Policy) -> Self {
        Self::Stationary { policy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Initial joint state index; `None` starts with every source synced at
    /// its first state (index 0).
    pub initial: Option<usize>,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self { horizon, seed, initial: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureComponent {
    Minus,
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary {
    pub final_z: f64,
    pub max_z: f64,
    pub mean_z: f64,
    /// `Z_T / T`; tends to zero when the budget is met.
    pub final_z_over_t: f64,
    /// Drift-bound constant, for reference.
    pub drift_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub horizon: u64,
    pub avg_cae: f64,
    pub avg_freq: f64,
    pub per_source_freq: Vec<f64>,
    /// `per_state_freq[m][i][j]`: fraction of slots with subsystem `m` in
    /// `(i, j)` and source `m` sampled.
    pub per_state_freq: Vec<Vec<Vec<f64>>>,
    pub se_cae: f64,
    pub se_freq: f64,
    pub se_per_source: Vec<f64>,
    pub queue: Option<QueueSummary>,
    /// Which side of a mixture was drawn for this run.
    pub mixture_component: Option<MixtureComponent>,
    pub batch_cae: Vec<f64>,
    pub batch_freq: Vec<f64>,
}

impl SimMetrics {
    /// Average Lagrangian cost at `lambda` and its batch-means standard error.
    pub fn lagrangian(&self, lambda: f64) -> (f64, f64) {
        let batches: Vec<f64> = self.batch_cae.iter().zip(&self.batch_freq).map(|(c, f)| c + lambda * f).collect();
        (self.avg_cae + lambda * self.avg_freq, batch_se(&batches))
    }
}

/// Standard error of the mean of batch means.
pub fn batch_se(batches: &[f64]) -> f64 {
    let b = batches.len();
    if b < 2 {
        return f64::NAN;
    }
    let mean = batches.iter().sum::<f64>() / b as f64;
    let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

enum Driver<'p> {
    Fixed(Stationary<'p>),
    Dpp(DppState),
}

/// Runs `config.horizon` slots.
pub fn run(space: &StateSpace, policy: &SimPolicy, config: &SimConfig) -> Result<SimMetrics> {
    simulate(space, policy, config, None::<&mut csv::Writer<std::io::Sink>>)
}

/// Like [`run`], also writing one CSV row per slot:
/// `t,state_index,action,success,cae,z` (`success` blank when idle, `z`
/// blank unless the policy is drift-plus-penalty).
pub fn run_traced<W: Write>(space: &StateSpace, policy: &SimPolicy, config: &SimConfig, out: W) -> Result<SimMetrics> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "state_index", "action", "success", "cae", "z"])?;
    let metrics = simulate(space, policy, config, Some(&mut w))?;
    w.flush()?;
    Ok(metrics)
}

fn simulate<W: Write>(
    space: &StateSpace,
    policy: &SimPolicy,
    config: &SimConfig,
    mut trace: Option<&mut csv::Writer<W>>,
) -> Result<SimMetrics> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let n_states = space.n_states();
    let start = config.initial.unwrap_or(0);
    if start >= n_states {
        return Err(Error::InvalidArgument(format!("initial state {start} out of range 0..{n_states}")));
    }
    let f_max = space.scenario().f_max;
    let mut policy_rng = stream(config.seed, POLICY_STREAM);
    let mut component = None;
    let mut driver = match policy {
        SimPolicy::Stationary { policy } => {
            policy.check(n_states, space.n_actions())?;
            let parts = policy.components();
            // a mixture commits to one side for the whole run
            let pick = if parts.len() == 1 {
                0
            } else {
                let minus = policy_rng.random::<f64>() < parts[0].0;
                component = Some(if minus { MixtureComponent::Minus } else { MixtureComponent::Plus });
                usize::from(!minus)
            };
            Driver::Fixed(parts[pick].1)
        }
        SimPolicy::Dpp { v } => Driver::Dpp(DppState::new(*v)?),
    };

    let mut sim = Simulator::new(space, config.seed);
    let n_src = space.n_sources();
    let horizon = config.horizon;
    let n_batches = BATCHES.min(horizon);
    let mut batch_cae = vec![0.0; n_batches as usize];
    let mut batch_tx = vec![vec![0u64; n_src]; n_batches as usize];
    let mut batch_len = vec![0u64; n_batches as usize];
    let mut counts: Vec<Vec<Vec<u64>>> =
        space.scenario().sources.iter().map(|s| vec![vec![0; s.n_states()]; s.n_states()]).collect();
    let (mut z_max, mut z_sum) = (0.0f64, 0.0);

    let mut state = space.decode(start);
    for t in 0..horizon {
        let b = ((t as u128 * n_batches as u128) / horizon as u128) as usize;
        let a = match &mut driver {
            Driver::Fixed(Stationary::Deterministic(p)) => p.actions[space.encode(&state)],
            Driver::Fixed(Stationary::Randomized(p)) => {
                sample_action(&p.rows[space.encode(&state)], policy_rng.random::<f64>())
            }
            Driver::Dpp(d) => dpp_decide(space, &state, d, f_max),
        };
        let step = sim.step(&state, a);
        if let Some(m) = a.source() {
            let sub = state.0[m];
            counts[m][sub.x][sub.xhat] += 1;
            batch_tx[b][m] += 1;
        }
        batch_cae[b] += step.cae;
        batch_len[b] += 1;
        let z = if let Driver::Dpp(d) = &mut driver {
            d.update(a, f_max);
            z_max = z_max.max(d.z);
            z_sum += d.z;
            Some(d.z)
        } else {
            None
        };
        if let Some(w) = trace.as_deref_mut() {
            w.write_record([
                t.to_string(),
                space.encode(&state).to_string(),
                a.0.to_string(),
                step.success.map(|ok| u8::from(ok).to_string()).unwrap_or_default(),
                step.cae.to_string(),
                z.map(|z| z.to_string()).unwrap_or_default(),
            ])?;
        }
        state = step.next;
    }

    let tf = horizon as f64;
    let per_state_freq: Vec<Vec<Vec<f64>>> = counts
        .iter()
        .map(|mat| mat.iter().map(|row| row.iter().map(|&c| c as f64 / tf).collect()).collect())
        .collect();
    let tx_per_source: Vec<u64> = (0..n_src).map(|m| batch_tx.iter().map(|b| b[m]).sum()).collect();
    let per_source_freq: Vec<f64> = tx_per_source.iter().map(|&c| c as f64 / tf).collect();
    let total_tx: u64 = tx_per_source.iter().sum();
    let lens: Vec<f64> = batch_len.iter().map(|&l| l as f64).collect();
    let batch_freq: Vec<f64> = batch_tx.iter().zip(&lens).map(|(b, l)| b.iter().sum::<u64>() as f64 / l).collect();
    let batch_cae_mean: Vec<f64> = batch_cae.iter().zip(&lens).map(|(c, l)| c / l).collect();
    let se_per_source = (0..n_src)
        .map(|m| batch_se(&batch_tx.iter().zip(&lens).map(|(b, l)| b[m] as f64 / l).collect::<Vec<_>>()))
        .collect();
    let queue = match &driver {
        Driver::Dpp(d) => Some(QueueSummary {
            final_z: d.z,
            max_z: z_max,
            mean_z: z_sum / tf,
            final_z_over_t: d.z / tf,
            drift_constant: drift_constant(f_max),
        }),
        Driver::Fixed(_) => None,
    };
    Ok(SimMetrics {
        horizon,
        avg_cae: batch_cae.iter().sum::<f64>() / tf,
        avg_freq: total_tx as f64 / tf,
        per_source_freq,
        per_state_freq,
        se_cae: batch_se(&batch_cae_mean),
        se_freq: batch_se(&batch_freq),
        se_per_source,
        queue,
        mixture_component: component,
        batch_cae: batch_cae_mean,
        batch_freq,
    })
}
