//! Brute-force oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the crate's chain analysis: closed classes come from a
//! boolean transitive closure and stationary laws from plain Gaussian
//! elimination, so agreement with the library is a genuine cross-check.

#![allow(dead_code, clippy::needless_range_loop)]

use cae_sched::mdp::Kernel;
use cae_sched::{Action, ChannelSpec, Scenario, SourceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Long-run `(F, C)` of one closed class of a deterministic policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub f: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyStats {
    pub actions: Vec<usize>,
    pub classes: Vec<ClassStats>,
}

impl PolicyStats {
    pub fn unichain(&self) -> Option<ClassStats> {
        (self.classes.len() == 1).then(|| self.classes[0])
    }

    /// Worst class gain at `lambda`.
    pub fn worst_gain(&self, lambda: f64) -> f64 {
        self.classes.iter().map(|k| k.c + lambda * k.f).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn reachability(p: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let n = p.len();
    let mut r: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || p[i][j] > 0.0).collect()).collect();
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Closed communicating classes: states whose reachable set only contains
/// states that reach them back.
pub fn closed_classes(p: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = p.len();
    let r = reachability(p);
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let recurrent = (0..n).all(|j| !r[i][j] || r[j][i]);
        if recurrent {
            let class: Vec<usize> = (0..n).filter(|&j| r[i][j]).collect();
            for &j in &class {
                seen[j] = true;
            }
            out.push(class);
        }
    }
    out
}

/// Stationary law of `p` restricted to `class` by Gaussian elimination with
/// partial pivoting on `pi (P - I) = 0, sum pi = 1`.
pub fn stationary(p: &[Vec<f64>], class: &[usize]) -> Vec<f64> {
    let k = class.len();
    // rows are equations, columns unknowns; last equation is normalization
    let mut a = vec![vec![0.0; k + 1]; k];
    for (col, &sj) in class.iter().enumerate() {
        for (row, &si) in class.iter().enumerate().take(k - 1) {
            a[row][col] = p[sj][si] - if si == sj { 1.0 } else { 0.0 };
        }
        a[k - 1][col] = 1.0;
    }
    a[k - 1][k] = 1.0;
    for c in 0..k {
        let piv = (c..k).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for j in c..=k {
            a[c][j] /= d;
        }
        for r in 0..k {
            if r != c && a[r][c] != 0.0 {
                let f = a[r][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    a.iter().map(|row| row[k]).collect()
}

/// Kernel rows and expected one-step CAE per `(s, a)`, read once.
pub struct Tables {
    rows: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
}

impl Tables {
    pub fn new(kernel: &Kernel) -> Self {
        let n = kernel.n_states();
        let rows: Vec<Vec<Vec<f64>>> =
            (0..n).map(|s| (0..kernel.n_actions()).map(|a| kernel.row(s, Action(a)).to_vec()).collect()).collect();
        let cost = (0..n)
            .map(|s| (0..kernel.n_actions()).map(|a| kernel_expectation(kernel, s, Action(a))).collect())
            .collect();
        Self { rows, cost }
    }
}

/// Evaluates one deterministic policy class by class.
pub fn policy_stats(tables: &Tables, actions: &[usize]) -> PolicyStats {
    let p: Vec<Vec<f64>> = actions.iter().enumerate().map(|(s, &a)| tables.rows[s][a].clone()).collect();
    let classes = closed_classes(&p)
        .into_iter()
        .map(|class| {
            let pi = stationary(&p, &class);
            let (mut f, mut c) = (0.0, 0.0);
            for (&s, &w) in class.iter().zip(&pi) {
                c += w * tables.cost[s][actions[s]];
                if actions[s] != 0 {
                    f += w;
                }
            }
            ClassStats { f, c }
        })
        .collect();
    PolicyStats { actions: actions.to_vec(), classes }
}

/// Every deterministic policy of a small instance.
pub fn enumerate(kernel: &Kernel) -> Vec<PolicyStats> {
    let n = kernel.n_states();
    let na = kernel.n_actions();
    let total = (na as u64).pow(n as u32);
    assert!(total <= 1 << 20, "instance too large to enumerate");
    let tables = Tables::new(kernel);
    (0..total)
        .into_par_iter()
        .map(|mut code| {
            let actions: Vec<usize> = (0..n)
                .map(|_| {
                    let a = (code % na as u64) as usize;
                    code /= na as u64;
                    a
                })
                .collect();
            policy_stats(&tables, &actions)
        })
        .collect()
}

/// Optimal Lagrangian gain: the best policy's worst class gain.
pub fn oracle_lagrangian(stats: &[PolicyStats], lambda: f64) -> f64 {
    stats.iter().map(|p| p.worst_gain(lambda)).fold(f64::INFINITY, f64::min)
}

/// Lowest average CAE reachable with frequency at most `f_max` by mixing
/// unichain deterministic policies: the lower convex hull of their `(F, C)`
/// points, minimized over `F <= f_max`.
pub fn oracle_constrained(stats: &[PolicyStats], f_max: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = stats.iter().filter_map(PolicyStats::unichain).map(|k| (k.f, k.c)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut best = f64::INFINITY;
    for (i, &(f, c)) in hull.iter().enumerate() {
        if f <= f_max {
            best = best.min(c);
        }
        if let Some(&(f2, c2)) = hull.get(i + 1) {
            if f < f_max && f_max < f2 {
                best = best.min(c + (c2 - c) * (f_max - f) / (f2 - f));
            }
        }
    }
    best
}

/// Single-source instance with `n` states, strictly positive transitions,
/// random costs and a random channel.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Scenario {
    let transition = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let cae = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.random_range(0.5..20.0) }).collect())
        .collect();
    Scenario {
        sources: vec![SourceSpec { transition, cae, weight: rng.random_range(0.5..2.0) }],
        channel: ChannelSpec { p_success: rng.random_range(0.2..1.0), delay: rng.random_range(0..2u8) },
        f_max: 0.5,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Expected `E[c | s, a]` summed from the kernel row.
pub fn kernel_expectation(kernel: &Kernel, s: usize, a: Action) -> f64 {
    kernel.row(s, a).iter().enumerate().map(|(t, &p)| p * kernel.space().cae_by_index(s, t)).sum()
}

/// `m` sources with `n` states each. Transition rows are strictly positive
/// unless `sparse`, in which case roughly a third of the entries are zeroed;
/// the diagonal and the cycle `i -> i+1` stay positive, so every source is
/// irreducible and aperiodic.
pub fn random_scenario(rng: &mut ChaCha8Rng, m: usize, n: usize, sparse: bool) -> Scenario {
    let sources = (0..m)
        .map(|_| {
            let transition = (0..n)
                .map(|i| {
                    let w: Vec<f64> = (0..n)
                        .map(|j| if sparse && i != j && j != (i + 1) % n && rng.random_bool(0.33) { 0.0 } else { rng.random_range(0.05..1.0) })
                        .collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let cae = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.random_range(0.0..30.0) }).collect())
                .collect();
            SourceSpec { transition, cae, weight: rng.random_range(0.1..3.0) }
        })
        .collect();
    Scenario {
        sources,
        channel: ChannelSpec { p_success: rng.random_range(0.0..=1.0), delay: rng.random_range(0..2u8) },
        f_max: rng.random_range(0.05..=1.0),
    }
}

/// Property-test settings with a fixed seed so every run sees the same cases.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Default::default()
    }
}
