//! Python bindings. Scenarios and policies cross the boundary as JSON-shaped
//! dicts (or JSON strings); results come back as plain dicts.

use cae_sched::chain::{evaluate_policy_from, frequency_matrices};
use cae_sched::dpp::{dpp_decide, DppState};
use cae_sched::qlearn::{learn_lmdp, LearnConfig, LearningRate};
use cae_sched::rvi::{solve_lmdp, RviOptions, S_REF};
use cae_sched::search::{search_exact, SearchMethod, SearchOptions};
use cae_sched::sim::{run, SimConfig, SimPolicy};
use cae_sched::{validate_scenario, Error, Kernel, Policy, Scenario, StateSpace, SubState, SystemState};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde_json::{json, Value};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) | Error::InvalidArgument(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Accepts a JSON string or any JSON-serializable Python object.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    let json = obj.py().import("json")?;
    json.call_method1("dumps", (obj,))?.extract()
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn scenario(obj: &Bound<'_, PyAny>) -> PyResult<Scenario> {
    let raw = Scenario::from_json_str(&json_text(obj)?).map_err(to_py_err)?;
    validate_scenario(raw).map_err(|e| to_py_err(Error::Invalid(e)))
}

fn policy(obj: &Bound<'_, PyAny>, space: &StateSpace) -> PyResult<Policy> {
    let p = Policy::from_json_str(&json_text(obj)?).map_err(to_py_err)?;
    p.check(space.n_states(), space.n_actions()).map_err(to_py_err)?;
    Ok(p)
}

fn policy_value(p: &Policy) -> Value {
    serde_json::to_value(p).expect("policy serializes")
}

/// The two-source reference instance as a scenario dict.
#[pyfunction]
#[pyo3(signature = (p_success=0.4, delay=0, f_max=0.4))]
fn reference_scenario<'py>(py: Python<'py>, p_success: f64, delay: u8, f_max: f64) -> PyResult<Bound<'py, PyAny>> {
    let sc = cae_sched::reference_scenario(p_success, delay, f_max);
    to_py(py, &serde_json::to_value(&sc).expect("scenario serializes"))
}

/// Validates a scenario; raises `ValueError` listing every violation.
#[pyfunction]
fn validate<'py>(py: Python<'py>, scenario_obj: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let sc = scenario(scenario_obj)?;
    let space = StateSpace::new(&sc).map_err(to_py_err)?;
    to_py(py, &json!({"n_sources": sc.n_sources(), "n_states": space.n_states(), "n_actions": space.n_actions()}))
}

/// Solves the Lagrangian problem at `lam` with relative value iteration.
#[pyfunction]
#[pyo3(signature = (scenario_obj, lam, epsilon=1e-2))]
fn solve<'py>(py: Python<'py>, scenario_obj: &Bound<'py, PyAny>, lam: f64, epsilon: f64) -> PyResult<Bound<'py, PyAny>> {
    let k = Kernel::from_scenario(&scenario(scenario_obj)?).map_err(to_py_err)?;
    let r = py.detach(|| solve_lmdp(&k, lam, &RviOptions::with_epsilon(epsilon))).map_err(to_py_err)?;
    to_py(
        py,
        &json!({
            "lambda": r.lambda,
            "L": r.avg_lagrangian,
            "C": r.avg_cae,
            "F": r.avg_freq,
            "iterations": r.iterations,
            "unichain": r.unichain,
            "h": r.h,
            "policy": policy_value(&Policy::Deterministic(r.policy)),
        }),
    )
}

/// Multiplier search (`"insect"` or `"bisect"`) for the scenario's budget.
#[pyfunction]
#[pyo3(signature = (scenario_obj, method="insect", epsilon=1e-2, xi=1e-3, zeta=1e-3, lambda_max=100.0))]
fn search<'py>(
    py: Python<'py>,
    scenario_obj: &Bound<'py, PyAny>,
    method: &str,
    epsilon: f64,
    xi: f64,
    zeta: f64,
    lambda_max: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let method = match method {
        "insect" => SearchMethod::Insect,
        "bisect" => SearchMethod::Bisect,
        other => return Err(PyValueError::new_err(format!("unknown search method {other:?}"))),
    };
    let sc = scenario(scenario_obj)?;
    let k = Kernel::from_scenario(&sc).map_err(to_py_err)?;
    let opts = SearchOptions { xi, zeta, lambda_max, ..SearchOptions::default() };
    let t = py
        .detach(|| search_exact(&k, method, sc.f_max, &RviOptions::with_epsilon(epsilon), &opts))
        .map_err(to_py_err)?;
    to_py(
        py,
        &json!({
            "gamma": t.gamma,
            "C": t.final_cae,
            "F": t.final_freq,
            "iterations": t.iterations,
            "inner_calls": t.inner_calls,
            "trace": t.rows,
            "policy": policy_value(&t.final_policy),
        }),
    )
}

/// Exact long-run averages of a policy from the all-synced start state,
/// plus its per-state transmission frequencies.
#[pyfunction]
#[pyo3(signature = (scenario_obj, policy_obj, lam=0.0))]
fn evaluate<'py>(
    py: Python<'py>,
    scenario_obj: &Bound<'py, PyAny>,
    policy_obj: &Bound<'py, PyAny>,
    lam: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let k = Kernel::from_scenario(&scenario(scenario_obj)?).map_err(to_py_err)?;
    let p = policy(policy_obj, k.space())?;
    let ev = evaluate_policy_from(&k, &p, lam, S_REF).map_err(to_py_err)?;
    let t = frequency_matrices(&k, &p, Some(S_REF)).map_err(to_py_err)?;
    to_py(py, &json!({"L": ev.avg_lagrangian, "C": ev.avg_cae, "F": ev.avg_freq, "T": t}))
}

/// Simulates a policy dict, or drift-plus-penalty when `dpp_v` is given.
#[pyfunction]
#[pyo3(signature = (scenario_obj, policy_obj=None, dpp_v=None, horizon=1_000_000, seed=0))]
fn simulate<'py>(
    py: Python<'py>,
    scenario_obj: &Bound<'py, PyAny>,
    policy_obj: Option<&Bound<'py, PyAny>>,
    dpp_v: Option<f64>,
    horizon: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let space = StateSpace::new(&scenario(scenario_obj)?).map_err(to_py_err)?;
    let driver = match (policy_obj, dpp_v) {
        (Some(p), None) => SimPolicy::from(policy(p, &space)?),
        (None, Some(v)) => SimPolicy::Dpp { v },
        _ => return Err(PyValueError::new_err("pass exactly one of policy_obj and dpp_v")),
    };
    let m = py.detach(|| run(&space, &driver, &SimConfig::new(horizon, seed))).map_err(to_py_err)?;
    to_py(py, &serde_json::to_value(&m).expect("metrics serialize"))
}

/// Trains average-cost Q-learning at `lam` on the simulator.
#[pyfunction]
#[pyo3(signature = (scenario_obj, lam, sweeps=1000, alpha=1e-3, seed=0, eval_horizon=100_000, checkpoint_every=0))]
#[allow(clippy::too_many_arguments)]
fn learn<'py>(
    py: Python<'py>,
    scenario_obj: &Bound<'py, PyAny>,
    lam: f64,
    sweeps: usize,
    alpha: f64,
    seed: u64,
    eval_horizon: u64,
    checkpoint_every: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let space = StateSpace::new(&scenario(scenario_obj)?).map_err(to_py_err)?;
    let cfg = LearnConfig {
        lambda: lam,
        sweeps,
        rate: LearningRate::Constant { alpha },
        seed,
        eval_horizon,
        checkpoint_every,
        ..LearnConfig::default()
    };
    let r = py.detach(|| learn_lmdp(&space, &cfg)).map_err(to_py_err)?;
    to_py(
        py,
        &json!({
            "lambda": r.lambda,
            "L": r.avg_lagrangian,
            "L_se": r.se_lagrangian,
            "C": r.avg_cae,
            "F": r.avg_freq,
            "min_q_ref": r.q.min(r.q.s_ref),
            "history": r.history,
            "policy": policy_value(&Policy::Deterministic(r.policy)),
        }),
    )
}

/// One drift-plus-penalty decision for `state`, a list of `(x, xhat)` pairs.
/// Returns 0 for idle or the 1-based source to sample.
#[pyfunction]
fn dpp_action(scenario_obj: &Bound<'_, PyAny>, state: Vec<(usize, usize)>, z: f64, v: f64) -> PyResult<usize> {
    let sc = scenario(scenario_obj)?;
    let space = StateSpace::new(&sc).map_err(to_py_err)?;
    if state.len() != sc.n_sources()
        || state.iter().zip(&sc.sources).any(|(&(x, xh), src)| x >= src.n_states() || xh >= src.n_states())
    {
        return Err(PyValueError::new_err("state does not match the scenario"));
    }
    let s = SystemState(state.into_iter().map(|(x, xhat)| SubState { x, xhat }).collect());
    let mut d = DppState::new(v).map_err(to_py_err)?;
    d.z = z;
    Ok(dpp_decide(&space, &s, &d, sc.f_max).0)
}

#[pymodule]
fn cae_sched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(reference_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(dpp_action, m)?)?;
    Ok(())
}
