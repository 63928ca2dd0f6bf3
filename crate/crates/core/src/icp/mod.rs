//! Interventional capability probes.
//!
//! `ê = p̂_int − p̄_obs`, where `p̂_int` is the success rate of `M` do-trials on
//! one concept and `p̄_obs` the unintervened rate from `n_obs` trials.

mod bounds;
mod confounding;

pub use bounds::{hoeffding_tail, required_samples};
pub use confounding::{confounding_bias_experiment, ConfoundingReport};

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, name_key};
use crate::scm::ScmError;
use crate::simulator::{SimError, SimProblem, Simulator};
use crate::stats::two_sided_z;

const BASELINE_TAG: &str = "baseline";
const ICP_TAG: &str = "icp";

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("{what} must be at least 1")]
    ZeroCount { what: &'static str },
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("no estimates to build a graph from")]
    NoEstimates,
    #[error("invalid bound arguments: {0}")]
    Domain(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub p_bar_obs: f64,
    pub n_obs: usize,
    pub successes: usize,
}

impl BaselineStats {
    pub fn from_counts(successes: usize, n_obs: usize) -> Result<Self, IcpError> {
        if n_obs == 0 {
            return Err(IcpError::ZeroCount { what: "n_obs" });
        }
        Ok(Self {
            p_bar_obs: successes as f64 / n_obs as f64,
            n_obs,
            successes,
        })
    }
}

/// How `σ̂` is handled when both rates are degenerate (0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateRule {
    /// Recompute `σ̂` with half a pseudo-success and half a pseudo-failure per arm.
    #[default]
    PseudoCount,
    /// Keep `σ̂ = 0` and call any nonzero `ê` significant.
    NonzeroEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpEstimate {
    pub concept: String,
    pub e_hat: f64,
    pub sigma_hat: f64,
    pub m_trials: usize,
    pub successes: usize,
    pub p_hat_int: f64,
    pub baseline: BaselineStats,
    /// `σ̂` came from the pseudo-count correction.
    pub sigma_corrected: bool,
}

fn unpooled_se(p_int: f64, m: usize, p_obs: f64, n_obs: usize) -> f64 {
    (p_int * (1.0 - p_int) / m as f64 + p_obs * (1.0 - p_obs) / n_obs as f64).sqrt()
}

impl IcpEstimate {
    pub fn from_counts(
        concept: &str,
        successes: usize,
        m_trials: usize,
        baseline: BaselineStats,
        rule: DegenerateRule,
    ) -> Result<Self, IcpError> {
        if m_trials == 0 {
            return Err(IcpError::ZeroCount { what: "m_trials" });
        }
        let p_hat_int = successes as f64 / m_trials as f64;
        let mut sigma_hat = unpooled_se(p_hat_int, m_trials, baseline.p_bar_obs, baseline.n_obs);
        let mut sigma_corrected = false;
        if sigma_hat == 0.0 && rule == DegenerateRule::PseudoCount {
            let p = (successes as f64 + 0.5) / (m_trials as f64 + 1.0);
            let q = (baseline.successes as f64 + 0.5) / (baseline.n_obs as f64 + 1.0);
            sigma_hat = unpooled_se(p, m_trials + 1, q, baseline.n_obs + 1);
            sigma_corrected = true;
        }
        Ok(Self {
            concept: concept.to_string(),
            e_hat: p_hat_int - baseline.p_bar_obs,
            sigma_hat,
            m_trials,
            successes,
            p_hat_int,
            baseline,
            sigma_corrected,
        })
    }

    pub fn z_score(&self) -> Option<f64> {
        (self.sigma_hat > 0.0).then(|| self.e_hat / self.sigma_hat)
    }
}

/// Seed of baseline trial `i`.
pub fn baseline_trial_seed(seed: u64, i: u64) -> u64 {
    derive_seed(seed, BASELINE_TAG, i)
}

/// Seed of do-trial `i` on `concept`.
pub fn icp_trial_seed(seed: u64, concept: &str, i: u64) -> u64 {
    derive_seed(derive_seed(seed, ICP_TAG, name_key(concept)), "trial", i)
}

pub fn estimate_baseline(
    sim: &dyn Simulator,
    problem: &SimProblem,
    n_obs: usize,
    seed: u64,
) -> Result<BaselineStats, IcpError> {
    if n_obs == 0 {
        return Err(IcpError::ZeroCount { what: "n_obs" });
    }
    let outcomes = (0..n_obs as u64)
        .into_par_iter()
        .map(|i| {
            sim.baseline_trial(problem, baseline_trial_seed(seed, i))
                .map(|t| t.correct)
        })
        .collect::<Result<Vec<_>, _>>()?;
    BaselineStats::from_counts(outcomes.iter().filter(|c| **c).count(), n_obs)
}

pub fn estimate_icp(
    sim: &dyn Simulator,
    problem: &SimProblem,
    concept: &str,
    m_trials: usize,
    baseline: BaselineStats,
    rule: DegenerateRule,
    seed: u64,
) -> Result<IcpEstimate, IcpError> {
    if m_trials == 0 {
        return Err(IcpError::ZeroCount { what: "m_trials" });
    }
    let concepts = [concept.to_string()];
    let outcomes = (0..m_trials as u64)
        .into_par_iter()
        .map(|i| {
            sim.do_trial(problem, &concepts, icp_trial_seed(seed, concept, i))
                .map(|t| t.correct)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let successes = outcomes.iter().filter(|c| **c).count();
    IcpEstimate::from_counts(concept, successes, m_trials, baseline, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub alpha: f64,
    pub z_crit: f64,
}

impl GraphConfig {
    pub fn new(alpha: f64) -> Result<Self, IcpError> {
        let z_crit = two_sided_z(alpha).ok_or(IcpError::InvalidAlpha(alpha))?;
        Ok(Self { alpha, z_crit })
    }
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self::new(0.05).expect("default alpha")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub concept: String,
    pub e_hat: f64,
    pub sigma_hat: f64,
    pub significant: bool,
    pub sign: EffectSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub edges: Vec<CausalEdge>,
    pub config: GraphConfig,
}

fn exceeds(value: f64, sigma: f64, z: f64) -> bool {
    if sigma > 0.0 {
        value > z * sigma
    } else {
        value > 0.0
    }
}

/// Two-sided edge test `|ê| / σ̂ > z`, input order kept.
pub fn build_causal_graph(
    estimates: &[IcpEstimate],
    config: GraphConfig,
) -> Result<CausalGraph, IcpError> {
    if estimates.is_empty() {
        return Err(IcpError::NoEstimates);
    }
    let edges = estimates
        .iter()
        .map(|e| CausalEdge {
            concept: e.concept.clone(),
            e_hat: e.e_hat,
            sigma_hat: e.sigma_hat,
            significant: exceeds(e.e_hat.abs(), e.sigma_hat, config.z_crit),
            sign: match e.e_hat.partial_cmp(&0.0) {
                Some(Ordering::Greater) => EffectSign::Positive,
                Some(Ordering::Less) => EffectSign::Negative,
                _ => EffectSign::Zero,
            },
        })
        .collect();
    Ok(CausalGraph { edges, config })
}

impl CausalGraph {
    /// Edges with `ê > z σ̂`, by `ê` descending then name.
    pub fn positive_edges(&self) -> Vec<&CausalEdge> {
        let mut out: Vec<&CausalEdge> = self
            .edges
            .iter()
            .filter(|e| e.significant && exceeds(e.e_hat, e.sigma_hat, self.config.z_crit))
            .collect();
        out.sort_by(|a, b| {
            b.e_hat
                .total_cmp(&a.e_hat)
                .then_with(|| a.concept.cmp(&b.concept))
        });
        out
    }

    pub fn e_hat(&self, concept: &str) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| e.concept == concept)
            .map(|e| e.e_hat)
    }
}

/// The activation set `K*`: one-sided positive-significant concepts.
pub fn select_activation_set(graph: &CausalGraph) -> Vec<String> {
    graph
        .positive_edges()
        .into_iter()
        .map(|e| e.concept.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcpState {
    ActivatableKnowledge,
    AbsentOrIrrelevant,
    Misapplication,
}

impl fmt::Display for IcpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IcpState::ActivatableKnowledge => "activatable",
            IcpState::AbsentOrIrrelevant => "absent",
            IcpState::Misapplication => "misapplication",
        })
    }
}

pub fn classify_icp_state(estimate: &IcpEstimate, config: GraphConfig) -> IcpState {
    if exceeds(estimate.e_hat, estimate.sigma_hat, config.z_crit) {
        IcpState::ActivatableKnowledge
    } else if exceeds(-estimate.e_hat, estimate.sigma_hat, config.z_crit) {
        IcpState::Misapplication
    } else {
        IcpState::AbsentOrIrrelevant
    }
}

#[derive(Serialize)]
struct IcpRow<'a> {
    problem_id: &'a str,
    concept: &'a str,
    e_hat: f64,
    sigma_hat: f64,
    m: usize,
    p_bar_obs: f64,
    significant: bool,
    state: String,
}

/// Writes `problem_id, concept, e_hat, sigma_hat, m, p_bar_obs, significant, state` rows.
pub fn write_icp_csv<W: Write>(
    out: W,
    rows: &[(String, IcpEstimate)],
    config: GraphConfig,
) -> Result<(), IcpError> {
    let mut w = csv::Writer::from_writer(out);
    for (problem_id, e) in rows {
        w.serialize(IcpRow {
            problem_id,
            concept: &e.concept,
            e_hat: e.e_hat,
            sigma_hat: e.sigma_hat,
            m: e.m_trials,
            p_bar_obs: e.baseline.p_bar_obs,
            significant: exceeds(e.e_hat.abs(), e.sigma_hat, config.z_crit),
            state: classify_icp_state(e, config).to_string(),
        })?;
    }
    w.flush().map_err(|e| IcpError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn estimate(concept: &str, e_hat: f64, sigma_hat: f64) -> IcpEstimate {
        IcpEstimate {
            concept: concept.into(),
            e_hat,
            sigma_hat,
            m_trials: 10,
            successes: 0,
            p_hat_int: 0.0,
            baseline: BaselineStats {
                p_bar_obs: 0.0,
                n_obs: 10,
                successes: 0,
            },
            sigma_corrected: false,
        }
    }

    #[test]
    fn sigma_formula_and_identity() {
        let b = BaselineStats::from_counts(3, 10).unwrap();
        let e = IcpEstimate::from_counts("c", 7, 10, b, DegenerateRule::PseudoCount).unwrap();
        assert_eq!(e.e_hat, e.p_hat_int - e.baseline.p_bar_obs);
        let want = (0.7f64 * 0.3 / 10.0 + 0.3 * 0.7 / 10.0).sqrt();
        assert!((e.sigma_hat - want).abs() < 1e-15);
        assert!(!e.sigma_corrected);
    }

    #[test]
    fn degenerate_cells() {
        let b = BaselineStats::from_counts(0, 10).unwrap();
        let e = IcpEstimate::from_counts("c", 10, 10, b, DegenerateRule::PseudoCount).unwrap();
        assert_eq!(e.e_hat, 1.0);
        assert!(e.sigma_corrected && e.sigma_hat > 0.0);
        let raw = IcpEstimate::from_counts("c", 10, 10, b, DegenerateRule::NonzeroEffect).unwrap();
        assert_eq!(raw.sigma_hat, 0.0);
        let g = build_causal_graph(&[raw], GraphConfig::default()).unwrap();
        assert!(g.edges[0].significant);
        assert!(BaselineStats::from_counts(0, 0).is_err());
    }

    #[test]
    fn published_edges() {
        let cfg = GraphConfig::new(0.05).unwrap();
        assert!((cfg.z_crit - 1.959964).abs() < 1e-6);
        let g = build_causal_graph(
            &[
                estimate("top", 0.219, 0.028),
                estimate("control", 0.039, 0.027),
                estimate("zero", 0.0, 0.1),
            ],
            cfg,
        )
        .unwrap();
        let flags: Vec<bool> = g.edges.iter().map(|e| e.significant).collect();
        assert_eq!(flags, vec![true, false, false]);
        assert!(build_causal_graph(&[], cfg).is_err());
    }

    #[test]
    fn activation_set_is_one_sided_and_ordered() {
        let cfg = GraphConfig::new(0.05).unwrap();
        let g = build_causal_graph(
            &[
                estimate("a", 0.4, 0.05),
                estimate("b", -0.4, 0.05),
                estimate("c", 0.01, 0.05),
            ],
            cfg,
        )
        .unwrap();
        assert_eq!(select_activation_set(&g), vec!["a".to_string()]);
        let g =
            build_causal_graph(&[estimate("z", 0.3, 0.05), estimate("y", 0.3, 0.05)], cfg).unwrap();
        assert_eq!(
            select_activation_set(&g),
            vec!["y".to_string(), "z".to_string()]
        );
    }

    #[test]
    fn three_states() {
        let cfg = GraphConfig::default();
        assert_eq!(
            classify_icp_state(&estimate("c", 0.219, 0.028), cfg),
            IcpState::ActivatableKnowledge
        );
        assert_eq!(
            classify_icp_state(&estimate("c", -0.2, 0.05), cfg),
            IcpState::Misapplication
        );
        assert_eq!(
            classify_icp_state(&estimate("c", 0.0, 0.05), cfg),
            IcpState::AbsentOrIrrelevant
        );
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_icp_csv(
            &mut buf,
            &[("p1".into(), estimate("c", 0.5, 0.1))],
            GraphConfig::default(),
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("problem_id,concept,e_hat,sigma_hat,m,p_bar_obs,significant,state\n")
        );
        assert!(text.contains("p1,c,0.5,0.1,10,0.0,true,activatable"));
    }
}
