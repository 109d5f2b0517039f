//! Command-line runner: single solves, searches, learning runs and
//! simulations, plus grid sweeps that write plot-ready CSV.
//!
//! Sweep output directory:
//!
//! - `results.csv`: one row per grid point and method, columns
//!   `p_success,f_max,delay,method,status,gamma,C,F,freq_1..freq_M,iterations,
//!   inner_calls,wall_time_s,sim_C,sim_C_se,sim_F,sim_F_se,error`
//! - `traces/<row>_<method>.csv`: multiplier-search traces
//! - `policies/<row>_<method>.json`: resolved policy documents
//! - `manifest.json`: the resolved configuration, tool version and per-row
//!   seeds; `sweep --config manifest.json` reruns it

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{evaluate_policy, evaluate_policy_from, frequency_matrices, sa_policy, SaPolicyParams};
use crate::error::{Error, Result};
use crate::mdp::Kernel;
use crate::policy::Policy;
use crate::qlearn::{learn_lmdp, LearnConfig, LearnMode, LearningRate, QLearnSolver};
use crate::rvi::{solve_lmdp, RviOptions, S_REF};
use crate::scenario::{validate_scenario, Scenario};
use crate::search::{cmax_upper_bound, intersection_search, search_exact, SearchMethod, SearchOptions, SearchTrace};
use crate::sim::{run, run_traced, SimConfig, SimMetrics, SimPolicy};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything went through.
pub const EXIT_OK: u8 = 0;
/// Bad configuration, unreadable input, or a failed single run.
pub const EXIT_CONFIG: u8 = 1;
/// A sweep finished but some grid rows failed.
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rvi,
    Bisect,
    Insect,
    Qlearn,
    Dpp,
    Sa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rvi => "rvi",
            Self::Bisect => "bisect",
            Self::Insect => "insect",
            Self::Qlearn => "qlearn",
            Self::Dpp => "dpp",
            Self::Sa => "sa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Generative,
    Trajectory,
}

#[derive(Debug, Parser)]
#[command(name = "cae-sched", version, about = "Cost-of-actuation-error scheduling: solve, search, learn, simulate, sweep")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario document and report every violation.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve the Lagrangian problem at a fixed multiplier.
    Solve(SolveCmd),
    /// Find the optimal multiplier for the scenario's budget.
    Search(SearchCmd),
    /// Train average-cost Q-learning at a fixed multiplier.
    Learn(LearnCmd),
    /// Simulate a policy document, drift-plus-penalty or the state-agnostic policy.
    Simulate(SimulateCmd),
    /// Run a grid of channel conditions, budgets and delays.
    Sweep(SweepCmd),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override the channel success probability.
    #[arg(long)]
    pub p_success: Option<f64>,
    /// Override the channel delay (0 or 1).
    #[arg(long)]
    pub delay: Option<u8>,
    /// Override the transmission budget.
    #[arg(long)]
    pub f_max: Option<f64>,
}

impl InstanceArgs {
    fn load(&self) -> Result<Scenario> {
        let mut sc = Scenario::load(&self.scenario)?;
        if self.p_success.is_some() || self.delay.is_some() {
            let p = self.p_success.unwrap_or(sc.channel.p_success);
            let d = self.delay.unwrap_or(sc.channel.delay);
            sc = sc.with_channel(p, d);
        }
        if let Some(f) = self.f_max {
            sc = sc.with_f_max(f);
        }
        validate_scenario(sc).map_err(Error::Invalid)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RviArgs {
    /// Value-iteration stopping threshold.
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub rvi_max_iterations: usize,
}

impl RviArgs {
    fn options(&self) -> RviOptions {
        RviOptions { epsilon: self.epsilon, max_iterations: self.rvi_max_iterations, ..RviOptions::default() }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 100.0)]
    pub lambda_max: f64,
    /// Bisection bracket width.
    #[arg(long, default_value_t = 1e-3)]
    pub xi: f64,
    /// Perturbation for the terminal mixture.
    #[arg(long, default_value_t = 1e-3)]
    pub zeta: f64,
    /// Relative tolerance of the on-curve test.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon_l: f64,
    #[arg(long, default_value_t = 500)]
    pub max_search_iterations: usize,
}

impl SearchArgs {
    fn options(&self) -> SearchOptions {
        SearchOptions {
            lambda_max: self.lambda_max,
            xi: self.xi,
            zeta: self.zeta,
            epsilon_l: self.epsilon_l,
            max_iterations: self.max_search_iterations,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    /// Sweeps (generative) or episodes (trajectory).
    #[arg(long, default_value_t = 1000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Generative)]
    pub mode: ModeArg,
    /// Initial exploration rate of the trajectory mode.
    #[arg(long, default_value_t = 1.0)]
    pub explore: f64,
    /// Rollout length used to estimate the learned policy's averages.
    #[arg(long, default_value_t = 100_000)]
    pub eval_horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

impl LearnArgs {
    fn config(&self, lambda: f64, seed: u64) -> LearnConfig {
        LearnConfig {
            lambda,
            sweeps: self.sweeps,
            rate: LearningRate::Constant { alpha: self.alpha },
            seed,
            eval_horizon: self.eval_horizon,
            mode: match self.mode {
                ModeArg::Generative => LearnMode::Generative,
                ModeArg::Trajectory => LearnMode::OnTrajectory { epsilon: self.explore },
            },
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveCmd {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub rvi: RviArgs,
    /// Write the policy document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SearchCmd {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// insect, bisect, or qlearn (intersection search over a learned inner solver).
    #[arg(long, value_enum, default_value_t = Method::Insect)]
    pub method: Method,
    #[command(flatten)]
    pub rvi: RviArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `trace.csv` and `policy.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnCmd {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `q.json`, `policy.json` and `checkpoints.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Policy document to run; omit to use `--method`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// dpp or sa when no policy document is given.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, default_value_t = 100.0)]
    pub dpp_v: f64,
    /// Per-source sampling probabilities of the state-agnostic policy;
    /// defaults to `f_max / M` each.
    #[arg(long, value_delimiter = ',')]
    pub sa_f: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1_000_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial joint state index (default: all synced at the first state).
    #[arg(long)]
    pub initial: Option<usize>,
    /// Per-slot CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepCmd {
    /// Rerun a manifest (or a bare experiment config) written by a previous sweep.
    #[arg(long, conflicts_with_all = ["scenario", "methods"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub scenario: Option<PathBuf>,
    #[arg(long = "method", value_enum, value_delimiter = ',', required_unless_present = "config")]
    pub methods: Vec<Method>,
    /// Channel success probabilities; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    pub p_success: Vec<f64>,
    /// Budgets; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    pub f_max: Vec<f64>,
    /// Delays; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    pub delay: Vec<u8>,
    /// Multiplier of the `rvi` method.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub rvi: RviArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[arg(long, default_value_t = 100.0)]
    pub dpp_v: f64,
    #[arg(long, value_delimiter = ',')]
    pub sa_f: Option<Vec<f64>>,
    /// Slots simulated per row; 0 skips simulation (dpp needs it).
    #[arg(long, default_value_t = 1_000_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A full sweep specification; also the `config` field of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: PathBuf,
    pub methods: Vec<Method>,
    pub p_success: Vec<f64>,
    pub f_max: Vec<f64>,
    pub delay: Vec<u8>,
    pub lambda: f64,
    pub rvi: RviOptions,
    pub search: SearchOptions,
    pub learn: LearnConfig,
    pub dpp_v: f64,
    pub sa_f: Option<Vec<f64>>,
    pub horizon: u64,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSeed {
    pub row: usize,
    pub p_success: f64,
    pub f_max: f64,
    pub delay: u8,
    pub method: Method,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub rows: Vec<RowSeed>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Manifest(Manifest),
    Config(ExperimentConfig),
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(match serde_json::from_str::<ConfigFile>(&text)? {
            ConfigFile::Manifest(m) => m.config,
            ConfigFile::Config(c) => c,
        })
    }

    /// Checks the axes and the referenced scenario; returns the scenario.
    pub fn check(&self) -> Result<Scenario> {
        if self.methods.is_empty() || self.p_success.is_empty() || self.f_max.is_empty() || self.delay.is_empty() {
            return Err(Error::InvalidArgument("sweep axes and method list must be non-empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        Scenario::load(&self.scenario)
    }

    /// Grid rows in output order: p_success outermost, then f_max, delay, method.
    pub fn rows(&self) -> Vec<RowSeed> {
        let mut out = Vec::new();
        for &p_success in &self.p_success {
            for &f_max in &self.f_max {
                for &delay in &self.delay {
                    for &method in &self.methods {
                        let row = out.len();
                        out.push(RowSeed { row, p_success, f_max, delay, method, seed: self.seed.wrapping_add(row as u64) });
                    }
                }
            }
        }
        out
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub p_success: f64,
    pub f_max: f64,
    pub delay: u8,
    pub method: Method,
    pub gamma: Option<f64>,
    pub cae: Option<f64>,
    pub freq: Option<f64>,
    pub per_source: Vec<f64>,
    pub iterations: Option<usize>,
    pub inner_calls: Option<usize>,
    pub wall_time_s: f64,
    pub sim: Option<(f64, f64, f64, f64)>,
    pub error: Option<String>,
}

#[derive(Default)]
struct Outcome {
    gamma: Option<f64>,
    cae: f64,
    freq: f64,
    per_source: Vec<f64>,
    iterations: Option<usize>,
    inner_calls: Option<usize>,
    policy: Option<Policy>,
    trace: Option<SearchTrace>,
    sim: Option<SimMetrics>,
}

fn per_source(kernel: &Kernel, policy: &Policy) -> Result<Vec<f64>> {
    Ok(frequency_matrices(kernel, policy, Some(S_REF))?
        .iter()
        .map(|t| t.iter().flatten().sum())
        .collect())
}

/// Analytic `(C, F)` of a policy: stationary if unichain, else from the
/// reference start state.
fn evaluate(kernel: &Kernel, policy: &Policy) -> Result<(f64, f64)> {
    let ev = match evaluate_policy(kernel, policy, 0.0) {
        Err(Error::Multichain { .. }) => evaluate_policy_from(kernel, policy, 0.0, S_REF)?,
        other => other?,
    };
    Ok((ev.avg_cae, ev.avg_freq))
}

fn sa_params(f: &Option<Vec<f64>>, sc: &Scenario) -> Result<SaPolicyParams> {
    match f {
        Some(f) => SaPolicyParams::new(f.clone(), sc.f_max),
        None => Ok(SaPolicyParams::uniform(sc.f_max, sc.n_sources())),
    }
}

fn run_row(cfg: &ExperimentConfig, base: &Scenario, row: &RowSeed) -> Result<Outcome> {
    let sc = validate_scenario(base.clone().with_channel(row.p_success, row.delay).with_f_max(row.f_max))
        .map_err(Error::Invalid)?;
    let kernel = Kernel::from_scenario(&sc)?;
    let space = kernel.space();
    let mut out = match row.method {
        Method::Rvi => {
            let r = solve_lmdp(&kernel, cfg.lambda, &cfg.rvi)?;
            let policy = Policy::Deterministic(r.policy);
            Outcome {
                gamma: Some(cfg.lambda),
                cae: r.avg_cae,
                freq: r.avg_freq,
                per_source: per_source(&kernel, &policy)?,
                iterations: Some(r.iterations),
                policy: Some(policy),
                ..Outcome::default()
            }
        }
        Method::Bisect | Method::Insect | Method::Qlearn => {
            let t = match row.method {
                Method::Bisect => search_exact(&kernel, SearchMethod::Bisect, sc.f_max, &cfg.rvi, &cfg.search)?,
                Method::Insect => search_exact(&kernel, SearchMethod::Insect, sc.f_max, &cfg.rvi, &cfg.search)?,
                _ => {
                    let solver = QLearnSolver { space, config: LearnConfig { seed: row.seed, ..cfg.learn } };
                    intersection_search(&solver, sc.f_max, cmax_upper_bound(&sc)?, &cfg.search)?
                }
            };
            Outcome {
                gamma: Some(t.gamma),
                cae: t.final_cae,
                freq: t.final_freq,
                per_source: per_source(&kernel, &t.final_policy)?,
                iterations: Some(t.iterations),
                inner_calls: Some(t.inner_calls),
                policy: Some(t.final_policy.clone()),
                trace: Some(t),
                ..Outcome::default()
            }
        }
        Method::Sa => {
            let params = sa_params(&cfg.sa_f, &sc)?;
            let policy = Policy::Randomized(sa_policy(&params, kernel.n_states()));
            let (cae, freq) = evaluate(&kernel, &policy)?;
            Outcome { cae, freq, per_source: params.f, policy: Some(policy), ..Outcome::default() }
        }
        Method::Dpp => {
            if cfg.horizon == 0 {
                return Err(Error::InvalidArgument("dpp needs a positive horizon".into()));
            }
            let m = run(space, &SimPolicy::Dpp { v: cfg.dpp_v }, &SimConfig::new(cfg.horizon, row.seed))?;
            Outcome { cae: m.avg_cae, freq: m.avg_freq, per_source: m.per_source_freq.clone(), sim: Some(m), ..Outcome::default() }
        }
    };
    if cfg.horizon > 0 {
        if let Some(p) = &out.policy {
            out.sim = Some(run(space, &p.clone().into(), &SimConfig::new(cfg.horizon, row.seed))?);
        }
    }
    Ok(out)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `results.csv` rows for `m` sources.
pub fn write_results<W: Write>(rows: &[ResultRow], m: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["p_success", "f_max", "delay", "method", "status", "gamma", "C", "F"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=m).map(|i| format!("freq_{i}")));
    header.extend(
        ["iterations", "inner_calls", "wall_time_s", "sim_C", "sim_C_se", "sim_F", "sim_F_se", "error"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.p_success.to_string(),
            r.f_max.to_string(),
            r.delay.to_string(),
            r.method.name().to_string(),
            if r.error.is_some() { "error" } else { "ok" }.to_string(),
            fmt_opt(r.gamma),
            fmt_opt(r.cae),
            fmt_opt(r.freq),
        ];
        rec.extend((0..m).map(|i| fmt_opt(r.per_source.get(i))));
        rec.extend([fmt_opt(r.iterations), fmt_opt(r.inner_calls), format!("{:.3}", r.wall_time_s)]);
        match r.sim {
            Some((c, cse, f, fse)) => rec.extend([c, cse, f, fse].iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep result: the rows in grid order and whether every row succeeded.
pub struct SweepReport {
    pub rows: Vec<ResultRow>,
    pub failed: usize,
}

/// Runs the whole grid, writes every output file and returns the rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let base = cfg.check()?;
    let grid = cfg.rows();
    fs::create_dir_all(cfg.out.join("traces"))?;
    fs::create_dir_all(cfg.out.join("policies"))?;
    let manifest =
        Manifest { tool: "cae-sched".into(), version: TOOL_VERSION.into(), config: cfg.clone(), rows: grid.clone() };
    fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    // each row owns its kernel and seeds; collect keeps grid order
    let outcomes: Vec<(Result<Outcome>, f64)> = pool.install(|| {
        grid.par_iter()
            .map(|row| {
                let t0 = Instant::now();
                let r = run_row(cfg, &base, row);
                (r, t0.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(grid.len());
    let mut failed = 0;
    for (row, (res, secs)) in grid.iter().zip(outcomes) {
        let stem = format!("{:04}_{}", row.row, row.method.name());
        let mut out = ResultRow {
            p_success: row.p_success,
            f_max: row.f_max,
            delay: row.delay,
            method: row.method,
            gamma: None,
            cae: None,
            freq: None,
            per_source: Vec::new(),
            iterations: None,
            inner_calls: None,
            wall_time_s: secs,
            sim: None,
            error: None,
        };
        match res {
            Ok(o) => {
                if let Some(t) = &o.trace {
                    t.write_csv(fs::File::create(cfg.out.join("traces").join(format!("{stem}.csv")))?)?;
                }
                if let Some(p) = &o.policy {
                    fs::write(cfg.out.join("policies").join(format!("{stem}.json")), p.to_json())?;
                }
                out.gamma = o.gamma;
                out.cae = Some(o.cae);
                out.freq = Some(o.freq);
                out.per_source = o.per_source;
                out.iterations = o.iterations;
                out.inner_calls = o.inner_calls;
                out.sim = o.sim.map(|m| (m.avg_cae, m.se_cae, m.avg_freq, m.se_freq));
            }
            Err(e) => {
                failed += 1;
                out.error = Some(e.to_string());
            }
        }
        rows.push(out);
    }
    write_results(&rows, base.n_sources(), fs::File::create(cfg.out.join("results.csv"))?)?;
    Ok(SweepReport { rows, failed })
}

fn sweep_config(cmd: &SweepCmd) -> Result<ExperimentConfig> {
    if let Some(path) = &cmd.config {
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(out) = &cmd.out {
            cfg.out = out.clone();
        }
        return Ok(cfg);
    }
    let scenario = cmd.scenario.clone().expect("clap requires --scenario without --config");
    let sc = Scenario::load(&scenario)?;
    // the manifest must still find the scenario when rerun from elsewhere
    let scenario = fs::canonicalize(&scenario)?;
    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    Ok(ExperimentConfig {
        scenario,
        methods: cmd.methods.clone(),
        p_success: or(&cmd.p_success, sc.channel.p_success),
        f_max: or(&cmd.f_max, sc.f_max),
        delay: if cmd.delay.is_empty() { vec![sc.channel.delay] } else { cmd.delay.clone() },
        lambda: cmd.lambda,
        rvi: cmd.rvi.options(),
        search: cmd.search.options(),
        learn: cmd.learn.config(0.0, cmd.seed),
        dpp_v: cmd.dpp_v,
        sa_f: cmd.sa_f.clone(),
        horizon: cmd.horizon,
        seed: cmd.seed,
        jobs: cmd.jobs,
        out: cmd.out.clone().unwrap_or_else(|| PathBuf::from("results")),
    })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, v)?;
    writeln!(stdout)?;
    Ok(())
}

fn trace_summary(t: &SearchTrace) -> serde_json::Value {
    json!({
        "method": t.method,
        "gamma": t.gamma,
        "C": t.final_cae,
        "F": t.final_freq,
        "iterations": t.iterations,
        "inner_calls": t.inner_calls,
        "policy_kind": t.final_policy.kind(),
    })
}

fn solve_cmd(cmd: &SolveCmd) -> Result<()> {
    let sc = cmd.instance.load()?;
    let kernel = Kernel::from_scenario(&sc)?;
    let r = solve_lmdp(&kernel, cmd.lambda, &cmd.rvi.options())?;
    print_json(&json!({
        "lambda": r.lambda,
        "L": r.avg_lagrangian,
        "C": r.avg_cae,
        "F": r.avg_freq,
        "iterations": r.iterations,
        "unichain": r.unichain,
    }))?;
    if let Some(path) = &cmd.out {
        fs::write(path, Policy::Deterministic(r.policy).to_json())?;
    }
    Ok(())
}

fn search_cmd(cmd: &SearchCmd) -> Result<()> {
    let sc = cmd.instance.load()?;
    let kernel = Kernel::from_scenario(&sc)?;
    let opts = cmd.search.options();
    let rvi = cmd.rvi.options();
    let t = match cmd.method {
        Method::Insect => search_exact(&kernel, SearchMethod::Insect, sc.f_max, &rvi, &opts)?,
        Method::Bisect => search_exact(&kernel, SearchMethod::Bisect, sc.f_max, &rvi, &opts)?,
        Method::Qlearn => {
            let solver = QLearnSolver { space: kernel.space(), config: cmd.learn.config(0.0, cmd.seed) };
            intersection_search(&solver, sc.f_max, cmax_upper_bound(&sc)?, &opts)?
        }
        other => return Err(Error::InvalidArgument(format!("search does not support method {}", other.name()))),
    };
    print_json(&trace_summary(&t))?;
    if let Some(dir) = &cmd.out {
        fs::create_dir_all(dir)?;
        t.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
        fs::write(dir.join("policy.json"), t.final_policy.to_json())?;
    }
    Ok(())
}

fn learn_cmd(cmd: &LearnCmd) -> Result<()> {
    let sc = cmd.instance.load()?;
    let space = crate::mdp::StateSpace::new(&sc)?;
    let r = learn_lmdp(&space, &cmd.learn.config(cmd.lambda, cmd.seed))?;
    print_json(&json!({
        "lambda": r.lambda,
        "L": r.avg_lagrangian,
        "L_se": r.se_lagrangian,
        "C": r.avg_cae,
        "F": r.avg_freq,
        "min_q_ref": r.q.min(r.q.s_ref),
        "checkpoints": r.history.len(),
    }))?;
    if let Some(dir) = &cmd.out {
        fs::create_dir_all(dir)?;
        r.q.save(dir.join("q.json"))?;
        fs::write(dir.join("policy.json"), Policy::Deterministic(r.policy).to_json())?;
        let mut w = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
        for c in &r.history {
            w.serialize(c)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn simulate_cmd(cmd: &SimulateCmd) -> Result<()> {
    let sc = cmd.instance.load()?;
    let space = crate::mdp::StateSpace::new(&sc)?;
    let policy = match (&cmd.policy, cmd.method) {
        (Some(path), None) => {
            let p = Policy::load(path)?;
            p.check(space.n_states(), space.n_actions())?;
            SimPolicy::from(p)
        }
        (None, Some(Method::Dpp)) => SimPolicy::Dpp { v: cmd.dpp_v },
        (None, Some(Method::Sa)) => Policy::Randomized(sa_policy(&sa_params(&cmd.sa_f, &sc)?, space.n_states())).into(),
        _ => return Err(Error::InvalidArgument("give either --policy <file> or --method dpp|sa".into())),
    };
    let config = SimConfig { horizon: cmd.horizon, seed: cmd.seed, initial: cmd.initial };
    let m = match &cmd.trace {
        Some(path) => run_traced(&space, &policy, &config, io::BufWriter::new(fs::File::create(path)?))?,
        None => run(&space, &policy, &config)?,
    };
    print_json(&json!({
        "horizon": m.horizon,
        "C": m.avg_cae,
        "C_se": m.se_cae,
        "F": m.avg_freq,
        "F_se": m.se_freq,
        "per_source_freq": m.per_source_freq,
        "per_state_freq": m.per_state_freq,
        "queue": m.queue,
        "mixture_component": m.mixture_component,
    }))
}

fn validate_cmd(path: &Path) -> Result<()> {
    let sc = Scenario::load(path)?;
    let states: usize = sc.sources.iter().map(|s| s.n_states() * s.n_states()).product();
    println!("ok: {} sources, {} joint states, {} actions", sc.n_sources(), states, sc.n_actions());
    Ok(())
}

/// Parses `args` and runs the chosen subcommand; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate { scenario } => validate_cmd(scenario),
        Command::Solve(c) => solve_cmd(c),
        Command::Search(c) => search_cmd(c),
        Command::Learn(c) => learn_cmd(c),
        Command::Simulate(c) => simulate_cmd(c),
        Command::Sweep(c) => {
            let report = sweep_config(c).and_then(|cfg| run_experiment(&cfg).map(|r| (cfg, r)));
            match report {
                Ok((cfg, r)) => {
                    eprintln!(
                        "{} rows ({} failed) written to {}",
                        r.rows.len(),
                        r.failed,
                        cfg.out.join("results.csv").display()
                    );
                    return ExitCode::from(if r.failed > 0 { EXIT_PARTIAL } else { EXIT_OK });
                }
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
