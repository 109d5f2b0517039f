//! Markov-chain machinery for stationary policies: induced transition
//! matrices, recurrent-class structure, stationary distributions and
//! long-run average costs, plus the source-agnostic (SA) policy.
//!
//! Stationary laws come from strongly connected components and a direct linear
//! solve on the closed class, so no aperiodicity assumption is needed.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Kernel};
use crate::policy::{Policy, RandomizedPolicy, Stationary};

/// Bound on `||nu P - nu||_inf` accepted from the linear solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Induced chain `P(pi)`: `P[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
pub fn policy_transition_matrix(kernel: &Kernel, policy: Stationary<'_>) -> DMatrix<f64> {
    let n = kernel.n_states();
    let mut p: DMatrix<f64> = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, w) in policy.action_dist(s) {
            for &(t, q) in kernel.support(s, a) {
                p[(s, t)] += w * q;
            }
        }
    }
    p
}

fn graph_of(p: &DMatrix<f64>) -> DiGraph<(), ()> {
    let n = p.nrows();
    let mut g = DiGraph::with_capacity(n, n * 4);
    for _ in 0..n {
        g.add_node(());
    }
    for s in 0..n {
        for t in 0..n {
            if p[(s, t)] > 0.0 {
                g.add_edge(NodeIndex::new(s), NodeIndex::new(t), ());
            }
        }
    }
    g
}

/// Closed communicating classes (recurrent classes), each sorted, ordered by
/// smallest member.
pub fn closed_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let sccs = tarjan_scc(&graph_of(p));
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|v| (0..n).all(|t| p[(v.index(), t)] == 0.0 || comp[t] == *c))
        })
        .map(|(_, members)| {
            let mut m: Vec<usize> = members.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Stationary law of the chain restricted to one closed class, returned as a
/// full-length vector that is zero off the class.
pub fn stationary_on_class(p: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    // (P_R^T - I) nu = 0 with the last equation swapped for sum(nu) = 1
    let mut a: DMatrix<f64> = DMatrix::zeros(k, k);
    for (r, &s) in class.iter().enumerate() {
        for (c, &t) in class.iter().enumerate() {
            a[(c, r)] = p[(s, t)];
        }
        a[(r, r)] -= 1.0;
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b: DVector<f64> = DVector::zeros(k);
    b[k - 1] = 1.0;
    let sol = a.lu().solve(&b).ok_or(Error::StationarySolve { residual: f64::INFINITY })?;
    let mut nu = vec![0.0; p.nrows()];
    for (r, &s) in class.iter().enumerate() {
        nu[s] = sol[r].max(0.0);
    }
    let total: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= total);
    let residual = class
        .iter()
        .map(|&t| (class.iter().map(|&s| nu[s] * p[(s, t)]).sum::<f64>() - nu[t]).abs())
        .fold(0.0, f64::max);
    if !(residual <= STATIONARY_RESIDUAL_TOL) {
        return Err(Error::StationarySolve { residual });
    }
    Ok(nu)
}

/// Stationary distribution of a unichain matrix; transient states get 0.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let classes = closed_classes(p);
    if classes.len() != 1 {
        return Err(Error::Multichain { classes });
    }
    stationary_on_class(p, &classes[0])
}

/// Row `start` of the limiting matrix `P*`: the long-run occupation law when
/// the chain starts in `start`. Works for multichain matrices by weighting each
/// reachable closed class with its absorption probability.
pub fn limiting_row(p: &DMatrix<f64>, start: usize) -> Result<Vec<f64>> {
    let n = p.nrows();
    let classes = closed_classes(p);
    let mut class_of = vec![usize::MAX; n];
    for (c, members) in classes.iter().enumerate() {
        for &s in members {
            class_of[s] = c;
        }
    }
    if class_of[start] != usize::MAX {
        return stationary_on_class(p, &classes[class_of[start]]);
    }
    // transient states reachable from start
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    let mut transient = Vec::new();
    let mut reached = Vec::new();
    while let Some(s) = stack.pop() {
        if class_of[s] != usize::MAX {
            if !reached.contains(&class_of[s]) {
                reached.push(class_of[s]);
            }
            continue;
        }
        transient.push(s);
        for t in 0..n {
            if p[(s, t)] > 0.0 && !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    reached.sort_unstable();
    let k = transient.len();
    let pos = |s: usize| transient.iter().position(|&t| t == s);
    let mut a: DMatrix<f64> = DMatrix::identity(k, k);
    for (r, &s) in transient.iter().enumerate() {
        for (c, &t) in transient.iter().enumerate() {
            a[(r, c)] -= p[(s, t)];
        }
    }
    let lu = a.lu();
    let start_row = pos(start).expect("start is transient");
    let mut nu = vec![0.0; n];
    for &c in &reached {
        let mut b: DVector<f64> = DVector::zeros(k);
        for (r, &s) in transient.iter().enumerate() {
            b[r] = classes[c].iter().map(|&t| p[(s, t)]).sum();
        }
        let absorb = lu.solve(&b).ok_or(Error::StationarySolve { residual: f64::INFINITY })?;
        let weight = absorb[start_row];
        if weight > 0.0 {
            let class_nu = stationary_on_class(p, &classes[c])?;
            for (v, w) in nu.iter_mut().zip(class_nu) {
                *v += weight * w;
            }
        }
    }
    Ok(nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStructure {
    RecurrentAperiodic,
    NotIrreducible,
    Periodic { period: usize },
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Recurrent iff one communicating class covers every state; the period is
/// the gcd of `level(u) + 1 - level(v)` over all edges of a BFS layering.
pub fn check_recurrent_aperiodic(p: &DMatrix<f64>) -> ChainStructure {
    let n = p.nrows();
    if tarjan_scc(&graph_of(p)).len() != 1 {
        return ChainStructure::NotIrreducible;
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(s) = queue.pop_front() {
        for t in 0..n {
            if p[(s, t)] > 0.0 && level[t] == usize::MAX {
                level[t] = level[s] + 1;
                queue.push_back(t);
            }
        }
    }
    let mut period = 0;
    for s in 0..n {
        for t in 0..n {
            if p[(s, t)] > 0.0 {
                period = gcd(period, (level[s] + 1).abs_diff(level[t]));
            }
        }
    }
    if period == 1 {
        ChainStructure::RecurrentAperiodic
    } else {
        ChainStructure::Periodic { period }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub lambda: f64,
    pub avg_cae: f64,
    pub avg_freq: f64,
    pub avg_lagrangian: f64,
    /// Long-run state occupation; for a mixture, the weighted occupation of
    /// the two components.
    pub stationary: Vec<f64>,
}

fn evaluate_with(
    kernel: &Kernel,
    policy: Stationary<'_>,
    lambda: f64,
    occupation: impl FnOnce(&DMatrix<f64>) -> Result<Vec<f64>>,
) -> Result<PolicyEvaluation> {
    let p = policy_transition_matrix(kernel, policy);
    let nu = occupation(&p)?;
    let mut cae = 0.0;
    let mut freq = 0.0;
    for (s, &w) in nu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let c: f64 = policy.action_dist(s).iter().map(|&(a, q)| q * kernel.expected_cae(s, a)).sum();
        cae += w * c;
        freq += w * policy.transmit_prob(s);
    }
    Ok(PolicyEvaluation { lambda, avg_cae: cae, avg_freq: freq, avg_lagrangian: cae + lambda * freq, stationary: nu })
}

fn combine(parts: Vec<(f64, PolicyEvaluation)>, lambda: f64) -> PolicyEvaluation {
    let n = parts[0].1.stationary.len();
    let mut out = PolicyEvaluation { lambda, avg_cae: 0.0, avg_freq: 0.0, avg_lagrangian: 0.0, stationary: vec![0.0; n] };
    for (w, e) in parts {
        out.avg_cae += w * e.avg_cae;
        out.avg_freq += w * e.avg_freq;
        for (v, x) in out.stationary.iter_mut().zip(&e.stationary) {
            *v += w * x;
        }
    }
    out.avg_lagrangian = out.avg_cae + lambda * out.avg_freq;
    out
}

/// Long-run averages of a unichain stationary policy.
pub fn evaluate_stationary(kernel: &Kernel, policy: Stationary<'_>, lambda: f64) -> Result<PolicyEvaluation> {
    evaluate_with(kernel, policy, lambda, stationary_distribution)
}

/// Long-run averages `C`, `F`, `L = C + lambda F`. A mixture is evaluated as
/// the `mu`-weighted sum of its components. Fails with
/// [`Error::Multichain`] when some component is not unichain.
pub fn evaluate_policy(kernel: &Kernel, policy: &Policy, lambda: f64) -> Result<PolicyEvaluation> {
    let parts = policy
        .components()
        .into_iter()
        .map(|(w, c)| Ok((w, evaluate_stationary(kernel, c, lambda)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(parts, lambda))
}

/// Averages seen from a given initial state; defined for multichain policies.
pub fn evaluate_policy_from(kernel: &Kernel, policy: &Policy, lambda: f64, start: usize) -> Result<PolicyEvaluation> {
    let parts = policy
        .components()
        .into_iter()
        .map(|(w, c)| Ok((w, evaluate_with(kernel, c, lambda, |p| limiting_row(p, start))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(parts, lambda))
}

/// `T^m[i][j]`: long-run fraction of slots in which subsystem `m` sits in
/// `(i, j)` and source `m` is sampled. Occupation is taken from `start` when
/// given, otherwise the policy must be unichain.
pub fn frequency_matrices(kernel: &Kernel, policy: &Policy, start: Option<usize>) -> Result<Vec<Vec<Vec<f64>>>> {
    let space = kernel.space();
    let mut out: Vec<Vec<Vec<f64>>> = space
        .scenario()
        .sources
        .iter()
        .map(|src| vec![vec![0.0; src.n_states()]; src.n_states()])
        .collect();
    for (w, comp) in policy.components() {
        let p = policy_transition_matrix(kernel, comp);
        let nu = match start {
            Some(s0) => limiting_row(&p, s0)?,
            None => stationary_distribution(&p)?,
        };
        for (s, &v) in nu.iter().enumerate() {
            for (a, q) in comp.action_dist(s) {
                if let Some(m) = a.source() {
                    let sub = space.substate(s, m);
                    out[m][sub.x][sub.xhat] += w * v * q;
                }
            }
        }
    }
    Ok(out)
}

/// Per-source sampling probabilities of a source-agnostic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaPolicyParams {
    pub f: Vec<f64>,
}

impl SaPolicyParams {
    pub fn new(f: Vec<f64>, f_max: f64) -> Result<Self> {
        let total: f64 = f.iter().sum();
        if f.is_empty() || f.iter().any(|&x| !(x > 0.0)) || total > f_max + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "SA probabilities {:?} must be positive with sum <= f_max = {}",
                f, f_max
            )));
        }
        Ok(Self { f })
    }

    /// `f_m = f_max / M` for every source.
    pub fn uniform(f_max: f64, n_sources: usize) -> Self {
        Self { f: vec![f_max / n_sources as f64; n_sources] }
    }
}

/// Same distribution `(1 - sum f, f_1, ..., f_M)` in every state.
pub fn sa_policy(params: &SaPolicyParams, n_states: usize) -> RandomizedPolicy {
    let idle = (1.0 - params.f.iter().sum::<f64>()).max(0.0);
    let mut row = Vec::with_capacity(params.f.len() + 1);
    row.push(idle);
    row.extend_from_slice(&params.f);
    RandomizedPolicy { rows: vec![row; n_states] }
}

/// Action distribution helper used by samplers.
pub fn sample_action(dist: &[f64], u: f64) -> Action {
    let mut acc = 0.0;
    for (a, &w) in dist.iter().enumerate() {
        acc += w;
        if u < acc {
            return Action(a);
        }
    }
    Action(dist.iter().rposition(|&w| w > 0.0).unwrap_or(0))
}
