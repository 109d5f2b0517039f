//! Outer search for the optimal multiplier `gamma` and construction of the
//! constrained-optimal policy.
//!
//! `L(lambda)` (the optimal Lagrangian average cost) is piecewise linear and
//! concave with slope `F(lambda)`, and `gamma` is the corner where `F` drops
//! below the budget. Two searches are provided:
//!
//! * [`bisection_search`] halves `[0, lambda_max]` on the sign of `F - f_max`;
//! * [`intersection_search`] jumps to the intersection of the tangents at the
//!   two current anchors and stops as soon as that intersection lies on the
//!   curve, i.e. at a corner.
//!
//! When no deterministic policy meets the budget with equality, the result is
//! a mixture of the policies on either side of `gamma`.
//!
//! The inner solver is injected through [`InnerSolver`], so either exact RVI
//! or the Q-learner can drive the search.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chain::stationary_distribution;
use crate::error::{Error, Result};
use crate::mdp::Kernel;
use crate::policy::{DeterministicPolicy, MixturePolicy, Policy};
use crate::rvi::{solve_lmdp, RviOptions, SolveResult};
use crate::scenario::Scenario;

/// Absolute slack used when comparing an exact `F` with the budget.
pub const EXACT_F_TOL: f64 = 1e-9;

/// Averages of a lambda-optimal policy, with standard errors when they are
/// estimated (zero for exact solvers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub lambda: f64,
    pub policy: DeterministicPolicy,
    pub avg_cae: f64,
    pub avg_freq: f64,
    pub avg_lagrangian: f64,
    pub se_cae: f64,
    pub se_freq: f64,
    pub se_lagrangian: f64,
}

impl From<SolveResult> for InnerSolution {
    fn from(r: SolveResult) -> Self {
        Self {
            lambda: r.lambda,
            policy: r.policy,
            avg_cae: r.avg_cae,
            avg_freq: r.avg_freq,
            avg_lagrangian: r.avg_lagrangian,
            se_cae: 0.0,
            se_freq: 0.0,
            se_lagrangian: 0.0,
        }
    }
}

impl InnerSolution {
    fn freq_tol(&self) -> f64 {
        EXACT_F_TOL.max(3.0 * self.se_freq)
    }

    fn feasible(&self, f_max: f64) -> bool {
        self.avg_freq <= f_max + self.freq_tol()
    }

    fn on_budget(&self, f_max: f64) -> bool {
        (self.avg_freq - f_max).abs() <= self.freq_tol()
    }
}

/// Solves the Lagrangian MDP for a given multiplier.
pub trait InnerSolver: Sync {
    fn solve(&self, lambda: f64) -> Result<InnerSolution>;
}

/// Exact inner solver: RVI on a materialized kernel.
pub struct RviSolver<'a> {
    pub kernel: &'a Kernel,
    pub options: RviOptions,
}

impl<'a> RviSolver<'a> {
    pub fn new(kernel: &'a Kernel, options: RviOptions) -> Self {
        Self { kernel, options }
    }
}

impl InnerSolver for RviSolver<'_> {
    fn solve(&self, lambda: f64) -> Result<InnerSolution> {
        solve_lmdp(self.kernel, lambda, &self.options).map(Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Upper end of the bisection bracket.
    pub lambda_max: f64,
    /// Bisection stops when the bracket is narrower than this.
    pub xi: f64,
    /// Perturbation around `gamma` for the terminal mixture of the
    /// intersection search.
    pub zeta: f64,
    /// Relative tolerance of the "intersection lies on the curve" test.
    pub epsilon_l: f64,
    pub max_iterations: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { lambda_max: 100.0, xi: 1e-3, zeta: 1e-3, epsilon_l: 1e-6, max_iterations: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Bisect,
    Insect,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    pub lambda: f64,
    pub f: f64,
    pub c: f64,
    pub l: f64,
    /// Bracket after this iteration; `hi` is infinite while the intersection
    /// search still anchors on the never-transmit point.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub method: SearchMethod,
    pub rows: Vec<TraceRow>,
    pub gamma: f64,
    pub final_policy: Policy,
    pub final_cae: f64,
    pub final_freq: f64,
    /// Outer iterations after the `gamma = 0` check.
    pub iterations: usize,
    /// Every inner-solver call, including the `gamma = 0` check, bracket
    /// checks and terminal perturbed solves.
    pub inner_calls: usize,
}

impl SearchTrace {
    /// CSV with header `n,lambda,F,C,L,lo,hi`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "lambda", "F", "C", "L", "lo", "hi"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.lambda.to_string(),
                r.f.to_string(),
                r.c.to_string(),
                r.l.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weight `mu` on `pi_minus` such that the mixture spends exactly `f_max`.
pub fn mix_policies(
    pi_minus: DeterministicPolicy,
    pi_plus: DeterministicPolicy,
    f_minus: f64,
    f_plus: f64,
    f_max: f64,
) -> Result<MixturePolicy> {
    if !(f_plus <= f_max && f_max <= f_minus && f_minus > f_plus) {
        return Err(Error::InfeasiblePair { f_minus, f_plus, f_max });
    }
    let mu = (f_max - f_plus) / (f_minus - f_plus);
    Ok(MixturePolicy { pi_minus, pi_plus, mu })
}

/// Upper bound on the average CAE of never transmitting: each source keeps
/// its worst frozen estimate, averaged under the source's stationary law.
pub fn cmax_upper_bound(scenario: &Scenario) -> Result<f64> {
    let mut total = 0.0;
    for src in &scenario.sources {
        let n = src.n_states();
        let q = nalgebra::DMatrix::from_fn(n, n, |i, j| src.transition[i][j]);
        let nu = stationary_distribution(&q)?;
        let worst = (0..n)
            .map(|xhat| (0..n).map(|i| nu[i] * src.cae[i][xhat]).sum::<f64>())
            .fold(0.0, f64::max);
        total += src.weight * worst;
    }
    Ok(total)
}

fn finish(
    method: SearchMethod,
    rows: Vec<TraceRow>,
    gamma: f64,
    inner_calls: usize,
    minus: InnerSolution,
    plus: InnerSolution,
    f_max: f64,
) -> Result<SearchTrace> {
    let iterations = rows.len();
    if plus.on_budget(f_max) {
        return Ok(deterministic(method, rows, gamma, iterations, inner_calls, plus));
    }
    // noisy solvers can land a hair outside the bracket; clamp onto it
    let noisy = minus.se_freq > 0.0 || plus.se_freq > 0.0;
    let (f_minus, f_plus) = if noisy {
        (minus.avg_freq.max(f_max), plus.avg_freq.min(f_max))
    } else {
        (minus.avg_freq, plus.avg_freq)
    };
    let mix = mix_policies(minus.policy, plus.policy, f_minus, f_plus, f_max)?;
    let mu = mix.mu;
    Ok(SearchTrace {
        method,
        rows,
        gamma,
        final_policy: mix.into(),
        final_cae: mu * minus.avg_cae + (1.0 - mu) * plus.avg_cae,
        final_freq: mu * minus.avg_freq + (1.0 - mu) * plus.avg_freq,
        iterations,
        inner_calls,
    })
}

fn deterministic(
    method: SearchMethod,
    rows: Vec<TraceRow>,
    gamma: f64,
    iterations: usize,
    inner_calls: usize,
    sol: InnerSolution,
) -> SearchTrace {
    SearchTrace {
        method,
        rows,
        gamma,
        final_cae: sol.avg_cae,
        final_freq: sol.avg_freq,
        final_policy: sol.policy.into(),
        iterations,
        inner_calls,
    }
}

/// Bisection on `F(lambda) - f_max` over `[0, lambda_max]`.
pub fn bisection_search<S: InnerSolver>(solver: &S, f_max: f64, opts: &SearchOptions) -> Result<SearchTrace> {
    check_common(f_max, opts)?;
    let at_zero = solver.solve(0.0)?;
    if at_zero.feasible(f_max) {
        return Ok(deterministic(SearchMethod::Bisect, Vec::new(), 0.0, 0, 1, at_zero));
    }
    let at_max = solver.solve(opts.lambda_max)?;
    if !at_max.feasible(f_max) {
        return Err(Error::BadBracket { lambda_max: opts.lambda_max, f: at_max.avg_freq, f_max });
    }
    let mut lo = at_zero;
    let mut hi = at_max;
    let mut calls = 2;
    let mut rows = Vec::new();
    while hi.lambda - lo.lambda >= opts.xi {
        if rows.len() >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations: rows.len(), last_change: hi.lambda - lo.lambda });
        }
        let mid = 0.5 * (lo.lambda + hi.lambda);
        let r = solver.solve(mid)?;
        calls += 1;
        let row_base = (r.lambda, r.avg_freq, r.avg_cae, r.avg_lagrangian);
        if r.feasible(f_max) {
            hi = r;
        } else {
            lo = r;
        }
        rows.push(TraceRow {
            n: rows.len() + 1,
            lambda: row_base.0,
            f: row_base.1,
            c: row_base.2,
            l: row_base.3,
            lo: lo.lambda,
            hi: hi.lambda,
        });
    }
    let gamma = 0.5 * (lo.lambda + hi.lambda);
    finish(SearchMethod::Bisect, rows, gamma, calls, lo, hi, f_max)
}

/// Tangent-intersection search. `c_max` seeds the never-transmit anchor
/// `(F = 0, C = L = c_max)`; any upper bound on the achievable CAE works.
pub fn intersection_search<S: InnerSolver>(
    solver: &S,
    f_max: f64,
    c_max: f64,
    opts: &SearchOptions,
) -> Result<SearchTrace> {
    check_common(f_max, opts)?;
    let at_zero = solver.solve(0.0)?;
    if at_zero.feasible(f_max) {
        return Ok(deterministic(SearchMethod::Insect, Vec::new(), 0.0, 0, 1, at_zero));
    }
    let mut calls = 1;
    let mut minus = at_zero;
    // the right anchor starts at the never-transmit point, which has no policy
    let mut plus: Option<InnerSolution> = None;
    let (mut f_plus, mut c_plus, mut lambda_plus) = (0.0, c_max, f64::INFINITY);
    let mut rows = Vec::new();
    loop {
        if rows.len() >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations: rows.len(), last_change: f64::NAN });
        }
        if minus.avg_freq - f_plus <= 0.0 {
            return Err(Error::DegenerateSlope { lambda: minus.lambda, f: minus.avg_freq });
        }
        let gamma = (c_plus - minus.avg_cae) / (minus.avg_freq - f_plus);
        let tangent = minus.avg_freq * (gamma - minus.lambda) + minus.avg_lagrangian;
        let r = solver.solve(gamma)?;
        calls += 1;
        let stop_tol = (opts.epsilon_l * r.avg_lagrangian.abs().max(1.0)).max(3.0 * r.se_lagrangian);
        let on_curve = (tangent - r.avg_lagrangian).abs() <= stop_tol;
        let mut row = TraceRow {
            n: rows.len() + 1,
            lambda: gamma,
            f: r.avg_freq,
            c: r.avg_cae,
            l: r.avg_lagrangian,
            lo: minus.lambda,
            hi: lambda_plus,
        };
        if on_curve {
            rows.push(row);
            if r.on_budget(f_max) {
                let iterations = rows.len();
                return Ok(deterministic(SearchMethod::Insect, rows, gamma, iterations, calls, r));
            }
            let quarter = 0.25 * opts.zeta;
            let (left, right) = rayon::join(|| solver.solve((gamma - quarter).max(0.0)), || solver.solve(gamma + quarter));
            calls += 2;
            let (left, right) = (left?, right?);
            // An inexact inner solver may not resolve policies this close to
            // the corner. The anchors are then the fallback: the stopping test
            // certifies that the left anchor and the solution at gamma (or the
            // right anchor, whose line meets the left one at gamma) are all
            // optimal at gamma.
            let lo = if left.feasible(f_max) { minus } else { left };
            let hi = if right.feasible(f_max) {
                right
            } else if r.feasible(f_max) {
                r
            } else if let Some(p) = plus {
                p
            } else {
                return Err(Error::InfeasiblePair { f_minus: lo.avg_freq, f_plus: right.avg_freq, f_max });
            };
            return finish(SearchMethod::Insect, rows, gamma, calls, lo, hi, f_max);
        }
        if r.feasible(f_max) {
            f_plus = r.avg_freq;
            c_plus = r.avg_cae;
            lambda_plus = r.lambda;
            row.hi = lambda_plus;
            plus = Some(r);
        } else {
            row.lo = r.lambda;
            minus = r;
        }
        rows.push(row);
    }
}

fn check_common(f_max: f64, opts: &SearchOptions) -> Result<()> {
    if !(f_max > 0.0 && f_max <= 1.0) {
        return Err(Error::InvalidArgument(format!("f_max {f_max} outside (0,1]")));
    }
    if !(opts.xi > 0.0 && opts.zeta > 0.0 && opts.epsilon_l > 0.0 && opts.lambda_max > 0.0) {
        return Err(Error::InvalidArgument("search tolerances and lambda_max must be positive".into()));
    }
    Ok(())
}

/// Runs either search with exact RVI inside.
pub fn search_exact(
    kernel: &Kernel,
    method: SearchMethod,
    f_max: f64,
    rvi: &RviOptions,
    opts: &SearchOptions,
) -> Result<SearchTrace> {
    let solver = RviSolver::new(kernel, *rvi);
    match method {
        SearchMethod::Bisect => bisection_search(&solver, f_max, opts),
        SearchMethod::Insect => {
            let c_max = cmax_upper_bound(kernel.space().scenario())?;
            intersection_search(&solver, f_max, c_max, opts)
        }
    }
}
