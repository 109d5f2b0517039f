//! Scheduling policies that minimize the state-dependent cost of actuation
//! error (CAE) for several Markov sources tracked over a lossy channel, under
//! an average transmission-frequency budget.
//!
//! Exact methods ([`rvi`], [`search`]), a model-free learner ([`qlearn`]) and
//! an online drift-plus-penalty rule ([`dpp`]) share one model ([`mdp`]) and
//! one evaluator ([`chain`]); [`sim`] runs any of them slot by slot.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod dpp;
pub mod error;
pub mod mdp;
pub mod policy;
pub mod qlearn;
pub mod rvi;
pub mod scenario;
pub mod search;
pub mod sim;

pub use error::{Error, Result};
pub use mdp::{Action, Kernel, StateSpace, SubState, SystemState};
pub use policy::{DeterministicPolicy, MixturePolicy, Policy, RandomizedPolicy};
pub use scenario::{reference_scenario, validate_scenario, ChannelSpec, Scenario, SourceSpec};
