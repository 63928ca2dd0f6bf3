//! End-to-end knowledge activation on one problem.
//!
//! Phase 0 asks for a plain answer. On failure, candidate concepts come from
//! the concept-gap diagnosis and BM25 neighbours; each is probed with `M`
//! do-trials (phase 1), filtered by significance (phase 2), searched over as
//! activation sets (phase 3), and finally the twelve lenses are tried in
//! order (phase 4).

mod rq1;
mod suite;

pub use rq1::{run_rq1_protocol, ControlConfig, Exclusion, Rq1Config, Rq1Error, Rq1Report, Rq1Row};
pub use suite::{
    checkpoint_path, load_problems, problem_seed, run_suite, write_problems, write_results_jsonl,
    write_summary_csv, SuiteError, SuiteOptions, SuiteSummary,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icp::{
    build_causal_graph, estimate_baseline, estimate_icp, select_activation_set, BaselineStats,
    CausalGraph, DegenerateRule, GraphConfig, IcpError, IcpEstimate,
};
use crate::retrieval::{extract_concepts, Bm25Index, RetrievalError};
use crate::rng::derive_seed;
use crate::search::{run_mcts, MctsConfig, MctsStep, RewardMode, SearchError, UcbParams};
use crate::simulator::{Lens, SimError, SimProblem, Simulator, TrialOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub m_trials: usize,
    pub budget_b: usize,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub n_obs: usize,
    pub bm25_top_k: usize,
    pub lens_order: Vec<Lens>,
    pub reward_mode: RewardMode,
    pub degenerate_rule: DegenerateRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            m_trials: 10,
            budget_b: 60,
            beta: 1.0,
            gamma: 0.5,
            alpha: 0.05,
            n_obs: 10,
            bm25_top_k: 8,
            lens_order: Lens::ALL.to_vec(),
            reward_mode: RewardMode::Binary,
            degenerate_rule: DegenerateRule::PseudoCount,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Icp(#[from] IcpError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.m_trials == 0 || self.n_obs == 0 || self.budget_b == 0 || self.bm25_top_k == 0 {
            return bad("m_trials, n_obs, budget_b and bm25_top_k must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        UcbParams::new(self.beta, self.gamma)?;
        let mut lenses = self.lens_order.clone();
        lenses.sort();
        if lenses != Lens::ALL.to_vec() {
            return bad("lens_order must be a permutation of the twelve lenses");
        }
        if let RewardMode::Shaped { lambda } = self.reward_mode {
            if lambda.is_nan() || lambda < 0.0 {
                return bad("shaped reward lambda must be nonnegative");
            }
        }
        Ok(())
    }

    pub fn graph_config(&self) -> Result<GraphConfig, PipelineError> {
        Ok(GraphConfig::new(self.alpha)?)
    }

    pub fn mcts_config(&self) -> MctsConfig {
        MctsConfig {
            budget: self.budget_b,
            params: UcbParams {
                beta: self.beta,
                gamma: self.gamma,
            },
            reward: self.reward_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseSolved {
    #[serde(rename = "SRV")]
    Srv,
    #[serde(rename = "MCTS")]
    Mcts,
    Recovery,
    Unsolved,
}

impl PhaseSolved {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseSolved::Srv => "SRV",
            PhaseSolved::Mcts => "MCTS",
            PhaseSolved::Recovery => "Recovery",
            PhaseSolved::Unsolved => "Unsolved",
        }
    }

    /// Solved after a failed plain attempt.
    pub fn is_cka(self) -> bool {
        matches!(self, PhaseSolved::Mcts | PhaseSolved::Recovery)
    }
}

/// Model calls by phase. Concept-gap diagnostics are tallied apart from the
/// answer-producing calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLedger {
    pub srv: usize,
    pub baseline: usize,
    pub icp: usize,
    pub rollouts: usize,
    pub lenses: usize,
    pub diagnostic: usize,
}

impl CallLedger {
    /// `srv + baseline + icp + rollouts + lenses`.
    pub fn answer_calls(&self) -> usize {
        self.srv + self.baseline + self.icp + self.rollouts + self.lenses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LensAttempt {
    pub lens: Lens,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub problem_id: String,
    pub phase_solved: PhaseSolved,
    pub answer: String,
    pub correct: bool,
    /// `K₀` after dropping names the simulator cannot act on.
    pub candidates: Vec<String>,
    pub dropped_candidates: Vec<String>,
    pub gap_warning: bool,
    pub baseline: Option<BaselineStats>,
    pub icp_table: Vec<IcpEstimate>,
    pub graph: Option<CausalGraph>,
    pub activation_set: Vec<String>,
    pub mcts_trace: Vec<MctsStep>,
    pub mcts_activated: Vec<String>,
    pub lens_used: Option<Lens>,
    pub lens_attempts: Vec<LensAttempt>,
    pub calls: CallLedger,
    pub llm_call_count: usize,
    pub max_icp: f64,
}

impl PipelineResult {
    fn new(problem_id: &str) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            phase_solved: PhaseSolved::Unsolved,
            answer: String::new(),
            correct: false,
            candidates: vec![],
            dropped_candidates: vec![],
            gap_warning: false,
            baseline: None,
            icp_table: vec![],
            graph: None,
            activation_set: vec![],
            mcts_trace: vec![],
            mcts_activated: vec![],
            lens_used: None,
            lens_attempts: vec![],
            calls: CallLedger::default(),
            llm_call_count: 0,
            max_icp: 0.0,
        }
    }

    fn finish(mut self, phase: PhaseSolved, trial: Option<&TrialOutcome>) -> Self {
        self.phase_solved = phase;
        self.correct = phase != PhaseSolved::Unsolved;
        if let Some(t) = trial {
            self.answer = t.raw_answer.clone();
        }
        self.llm_call_count = self.calls.answer_calls();
        self.max_icp = self
            .icp_table
            .iter()
            .map(|e| e.e_hat)
            .fold(None, |acc: Option<f64>, e| {
                Some(acc.map_or(e, |a| a.max(e)))
            })
            .unwrap_or(0.0);
        self
    }
}

/// A run that stopped on an error, with everything gathered up to that point.
#[derive(Debug, Error)]
#[error("pipeline stopped on problem `{}`: {source}", partial.problem_id)]
pub struct PipelineFailure {
    pub partial: Box<PipelineResult>,
    #[source]
    pub source: PipelineError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub concepts: Vec<String>,
    pub gap_warning: bool,
}

/// `K₀`: MEDIUM and LOW diagnoses, then tags of BM25 hits with a positive
/// score, deduplicated in first-occurrence order.
pub fn assemble_candidates(
    problem: &SimProblem,
    sim: &dyn Simulator,
    failed_answer: &str,
    index: Option<&Bm25Index>,
    config: &PipelineConfig,
    seed: u64,
) -> Result<Candidates, PipelineError> {
    let report = sim.concept_gap(problem, failed_answer, seed)?;
    let mut concepts: Vec<String> = Vec::new();
    for d in &report.diagnoses {
        if d.level.is_deficient() && !concepts.contains(&d.concept) {
            concepts.push(d.concept.clone());
        }
    }
    if let Some(index) = index {
        let hits: Vec<_> = index
            .query(&problem.statement, config.bm25_top_k)?
            .into_iter()
            .filter(|h| h.score > 0.0)
            .collect();
        for tag in extract_concepts(&hits) {
            if !concepts.contains(&tag) {
                concepts.push(tag);
            }
        }
    }
    Ok(Candidates {
        concepts,
        gap_warning: report.parse_warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensRecovery {
    pub lens_used: Option<Lens>,
    pub attempts: Vec<LensAttempt>,
    pub trial: Option<TrialOutcome>,
}

/// Tries lenses in `config.lens_order` until one succeeds. Each lens draws
/// from its own seed, so reordering does not change a lens's outcome.
pub fn multi_lens_recover(
    problem: &SimProblem,
    sim: &dyn Simulator,
    config: &PipelineConfig,
    seed: u64,
) -> Result<LensRecovery, SimError> {
    let mut attempts = Vec::with_capacity(config.lens_order.len());
    for &lens in &config.lens_order {
        let trial = sim.lens_trial(
            problem,
            lens,
            derive_seed(seed, "lens", lens.index() as u64),
        )?;
        attempts.push(LensAttempt {
            lens,
            correct: trial.correct,
        });
        if trial.correct {
            return Ok(LensRecovery {
                lens_used: Some(lens),
                attempts,
                trial: Some(trial),
            });
        }
    }
    Ok(LensRecovery {
        lens_used: None,
        attempts,
        trial: None,
    })
}

fn fail(result: PipelineResult, err: impl Into<PipelineError>) -> PipelineFailure {
    let partial = result.finish(PhaseSolved::Unsolved, None);
    PipelineFailure {
        partial: Box::new(partial),
        source: err.into(),
    }
}

/// Runs all phases on one problem. Deterministic for a given seed when the
/// simulator is.
pub fn run_pipeline(
    problem: &SimProblem,
    sim: &dyn Simulator,
    index: Option<&Bm25Index>,
    config: &PipelineConfig,
    seed: u64,
) -> Result<PipelineResult, PipelineFailure> {
    let mut result = PipelineResult::new(&problem.id);
    if let Err(e) = config.validate() {
        return Err(fail(result, e));
    }
    let graph_config = match config.graph_config() {
        Ok(g) => g,
        Err(e) => return Err(fail(result, e)),
    };

    // Phase 0
    let srv = match sim.baseline_trial(problem, derive_seed(seed, "srv", 0)) {
        Ok(t) => t,
        Err(e) => return Err(fail(result, e)),
    };
    result.calls.srv = 1;
    if srv.correct {
        return Ok(result.finish(PhaseSolved::Srv, Some(&srv)));
    }

    let candidates = match assemble_candidates(
        problem,
        sim,
        &srv.raw_answer,
        index,
        config,
        derive_seed(seed, "concept-gap", 0),
    ) {
        Ok(c) => c,
        Err(e) => return Err(fail(result, e)),
    };
    result.calls.diagnostic = 1;
    result.gap_warning = candidates.gap_warning;
    for c in candidates.concepts {
        if sim.resolves(problem, &c) {
            result.candidates.push(c);
        } else {
            result.dropped_candidates.push(c);
        }
    }

    // Phase 1
    let probe_seed = derive_seed(seed, "probe", 0);
    let baseline = match estimate_baseline(sim, problem, config.n_obs, probe_seed) {
        Ok(b) => b,
        Err(e) => return Err(fail(result, e)),
    };
    result.calls.baseline = config.n_obs;
    result.baseline = Some(baseline);
    for concept in result.candidates.clone() {
        match estimate_icp(
            sim,
            problem,
            &concept,
            config.m_trials,
            baseline,
            config.degenerate_rule,
            probe_seed,
        ) {
            Ok(e) => {
                result.calls.icp += config.m_trials;
                result.icp_table.push(e);
            }
            Err(e) => return Err(fail(result, e)),
        }
    }

    // Phases 2 and 3
    if !result.icp_table.is_empty() {
        let graph = match build_causal_graph(&result.icp_table, graph_config) {
            Ok(g) => g,
            Err(e) => return Err(fail(result, e)),
        };
        result.activation_set = select_activation_set(&graph);
        let outcome = run_mcts(
            problem,
            sim,
            &graph,
            config.mcts_config(),
            derive_seed(seed, "search", 0),
        );
        result.graph = Some(graph);
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => return Err(fail(result, e)),
        };
        result.calls.rollouts = outcome.rollouts();
        result.mcts_trace = outcome.trace.clone();
        result.mcts_activated = outcome.activated.clone();
        if outcome.solved {
            return Ok(result.finish(PhaseSolved::Mcts, outcome.trial.as_ref()));
        }
    }

    // Phase 4
    let recovery = match multi_lens_recover(problem, sim, config, derive_seed(seed, "recovery", 0))
    {
        Ok(r) => r,
        Err(e) => return Err(fail(result, e)),
    };
    result.calls.lenses = recovery.attempts.len();
    result.lens_attempts = recovery.attempts;
    result.lens_used = recovery.lens_used;
    if recovery.lens_used.is_some() {
        return Ok(result.finish(PhaseSolved::Recovery, recovery.trial.as_ref()));
    }
    Ok(result.finish(PhaseSolved::Unsolved, None))
}
