//! Problem instances: Markov sources, the lossy channel and the transmission budget.
//!
//! A [`Scenario`] is the single on-disk instance format (JSON) consumed by every
//! CLI subcommand:
//!
//! ```json
//! {"sources":[{"transition":[[0.8,0.1,0.1],...],"cae":[[0,10,30],...],"weight":1}],
//!  "channel":{"p_success":0.4,"delay":0},
//!  "f_max":0.4}
//! ```
//!
//! Matrices are row-major. Source indices are 0-based in code and 1-based in
//! every message meant for people.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScenarioIssue, ValidationErrors};

/// Tolerance on transition row sums. Rows are never renormalized.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Cost matrix shared by both sources of the reference instance.
pub const REFERENCE_CAE: [[f64; 3]; 3] = [[0.0, 10.0, 30.0], [30.0, 0.0, 10.0], [10.0, 30.0, 0.0]];

/// One Markov source: its transition matrix, its actuation-error cost matrix
/// `cae[x][xhat]` and its significance weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub transition: Vec<Vec<f64>>,
    pub cae: Vec<Vec<f64>>,
    pub weight: f64,
}

impl SourceSpec {
    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    /// Symmetric chain that stays put with probability `1 - (n-1)p` and jumps
    /// to each other state with probability `p`.
    pub fn symmetric(n: usize, p: f64, cae: Vec<Vec<f64>>, weight: f64) -> Self {
        let stay = 1.0 - (n as f64 - 1.0) * p;
        let transition = (0..n)
            .map(|i| (0..n).map(|j| if i == j { stay } else { p }).collect())
            .collect();
        Self { transition, cae, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub p_success: f64,
    /// 0: a sample reaches the receiver within the slot; 1: one slot later.
    pub delay: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sources: Vec<SourceSpec>,
    pub channel: ChannelSpec,
    pub f_max: f64,
}

impl Scenario {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Number of actions: idle plus one per source.
    pub fn n_actions(&self) -> usize {
        self.sources.len() + 1
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads and validates a scenario document.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        validate_scenario(Self::from_json_str(&text)?).map_err(Error::Invalid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_channel(mut self, p_success: f64, delay: u8) -> Self {
        self.channel = ChannelSpec { p_success, delay };
        self
    }

    pub fn with_f_max(mut self, f_max: f64) -> Self {
        self.f_max = f_max;
        self
    }

    /// Same instance with every cost matrix replaced by the Hamming distortion
    /// `1(x != xhat)`.
    pub fn distortion_variant(&self) -> Self {
        let mut out = self.clone();
        for src in &mut out.sources {
            let n = src.n_states();
            src.cae = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect();
        }
        out
    }
}

/// Checks every invariant and returns the scenario untouched, or the full list
/// of violations.
pub fn validate_scenario(raw: Scenario) -> std::result::Result<Scenario, ValidationErrors> {
    let mut issues = Vec::new();
    if raw.sources.is_empty() {
        issues.push(ScenarioIssue::NoSources);
    }
    for (m, src) in raw.sources.iter().enumerate() {
        let n = src.n_states();
        if n < 2 {
            issues.push(ScenarioIssue::TooFewStates { source: m, n_states: n });
        }
        let square = |mat: &Vec<Vec<f64>>| mat.len() == n && mat.iter().all(|r| r.len() == n);
        if !square(&src.transition) {
            issues.push(ScenarioIssue::ShapeMismatch { source: m, matrix: "transition", expected: n });
        } else {
            for (i, row) in src.transition.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        issues.push(ScenarioIssue::ProbabilityOutOfRange {
                            source: m,
                            row: i,
                            col: j,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    issues.push(ScenarioIssue::RowSum { source: m, row: i, sum });
                }
            }
        }
        if !square(&src.cae) {
            issues.push(ScenarioIssue::ShapeMismatch { source: m, matrix: "cae", expected: n });
        } else {
            for (i, row) in src.cae.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    if !(c >= 0.0) || !c.is_finite() {
                        issues.push(ScenarioIssue::NegativeCost { source: m, row: i, col: j, value: c });
                    }
                }
                if row[i] != 0.0 {
                    issues.push(ScenarioIssue::NonzeroDiagonal { source: m, index: i, value: row[i] });
                }
            }
        }
        if !(src.weight >= 0.0) || !src.weight.is_finite() {
            issues.push(ScenarioIssue::BadWeight { source: m, value: src.weight });
        }
    }
    let ch = raw.channel;
    if !(0.0..=1.0).contains(&ch.p_success) || ch.delay > 1 {
        issues.push(ScenarioIssue::BadChannel { p_success: ch.p_success, delay: ch.delay });
    }
    if !(raw.f_max > 0.0 && raw.f_max <= 1.0) {
        issues.push(ScenarioIssue::BadBudget { f_max: raw.f_max });
    }
    if issues.is_empty() {
        Ok(raw)
    } else {
        Err(ValidationErrors(issues))
    }
}

/// The two-source reference instance: a slowly evolving 3-state source
/// (`p = 0.1`) and a rapidly evolving one (`p = 0.4`), both with
/// [`REFERENCE_CAE`] and unit weight.
pub fn reference_scenario(p_success: f64, delay: u8, f_max: f64) -> Scenario {
    let cae: Vec<Vec<f64>> = REFERENCE_CAE.iter().map(|r| r.to_vec()).collect();
    Scenario {
        sources: vec![
            SourceSpec::symmetric(3, 0.1, cae.clone(), 1.0),
            SourceSpec::symmetric(3, 0.4, cae, 1.0),
        ],
        channel: ChannelSpec { p_success, delay },
        f_max,
    }
}
