//! Intervention simulators: the system whose knowledge is being probed.
//!
//! Every trial takes an explicit `seed`. Callers derive one seed per trial
//! from a run seed, so outcomes never depend on scheduling.

mod endpoint;
mod lens;
mod mock;
mod perturbed;
mod synthetic;
pub mod verify;

pub use endpoint::{
    baseline_prompt, do_prompt, gap_prompt, lens_prompt, parse_gap_reply, ChatMessage, ChatRequest,
    EndpointConfig, EndpointSimulator, SYSTEM_PROMPT, TEMPLATE_VERSION,
};
pub use lens::{Lens, UnknownLens};
pub use mock::{MockBehavior, MockServer};
pub use perturbed::{measure_tv_gap, perturb, PerturbedSimulator, SimulatorFidelity, TvGap};
pub use synthetic::SyntheticSimulator;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::{DiscreteStudentScm, MasteryLink, ScmError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error(transparent)]
    UnknownLens(#[from] UnknownLens),
    #[error("intervention needs at least one concept")]
    EmptyConceptSet,
    #[error("problem `{0}` has no synthetic binding")]
    MissingBinding(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("fidelity must lie in [0, 1], got {0}")]
    InvalidFidelity(f64),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("audit log: {0}")]
    Audit(String),
    #[error("trial count must be at least 1")]
    NoTrials,
}

/// Three-level concept understanding label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GapLevel {
    High,
    Medium,
    Low,
}

impl GapLevel {
    pub const HIGH_THRESHOLD: f64 = 0.7;
    pub const LOW_THRESHOLD: f64 = 0.3;

    pub fn from_probability(p: f64) -> Self {
        if p >= Self::HIGH_THRESHOLD {
            GapLevel::High
        } else if p >= Self::LOW_THRESHOLD {
            GapLevel::Medium
        } else {
            GapLevel::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GapLevel::High => "HIGH",
            GapLevel::Medium => "MEDIUM",
            GapLevel::Low => "LOW",
        }
    }

    /// Whether the concept is a candidate for activation.
    pub fn is_deficient(self) -> bool {
        self != GapLevel::High
    }
}

impl fmt::Display for GapLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HIGH" => Ok(GapLevel::High),
            "MEDIUM" => Ok(GapLevel::Medium),
            "LOW" => Ok(GapLevel::Low),
            other => Err(format!("unknown gap level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDiagnosis {
    pub concept: String,
    pub level: GapLevel,
}

/// Result of a concept-gap call. `parse_warning` is set when an endpoint
/// reply could not be read as diagnosis lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub diagnoses: Vec<ConceptDiagnosis>,
    pub parse_warning: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub correct: bool,
    /// Exact match of the extracted answer against the gold string.
    pub strict_match: bool,
    pub raw_answer: String,
    pub latency_ms: u64,
}

impl TrialOutcome {
    pub(crate) fn synthetic(correct: bool) -> Self {
        Self {
            correct,
            strict_match: correct,
            raw_answer: String::new(),
            latency_ms: 0,
        }
    }
}

/// Ties a problem to a ground-truth model. `concepts[j]` names concept `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmBinding {
    pub scm: DiscreteStudentScm,
    pub concepts: Vec<String>,
    /// Outcome log-odds shift per lens; missing lenses get 0.
    #[serde(default)]
    pub lens_modifiers: BTreeMap<Lens, f64>,
    /// Standard deviation of the Gaussian log-odds noise in concept-gap reports.
    #[serde(default)]
    pub gap_noise_sd: f64,
}

impl ScmBinding {
    pub fn new(scm: DiscreteStudentScm, concepts: Vec<String>) -> Result<Self, SimError> {
        if concepts.len() != scm.n_concepts() {
            return Err(SimError::Scm(ScmError::Dimension(format!(
                "{} concept names for {} concepts",
                concepts.len(),
                scm.n_concepts()
            ))));
        }
        Ok(Self {
            scm,
            concepts,
            lens_modifiers: BTreeMap::new(),
            gap_noise_sd: 0.0,
        })
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == name)
    }

    pub fn lens_modifier(&self, lens: Lens) -> f64 {
        self.lens_modifiers.get(&lens).copied().unwrap_or(0.0)
    }

    /// Adds a concept with no edge into the outcome.
    pub fn with_null_concept(&self, name: &str, link: MasteryLink) -> Result<Self, SimError> {
        if self.concept_index(name).is_some() {
            return Err(SimError::Scm(ScmError::Invalid(format!(
                "concept `{name}` already bound"
            ))));
        }
        let mut out = self.clone();
        out.scm = self.scm.with_null_concept(link)?;
        out.concepts.push(name.to_string());
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimProblem {
    pub id: String,
    pub statement: String,
    pub gold_answer: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<ScmBinding>,
}

impl SimProblem {
    pub fn binding(&self) -> Result<&ScmBinding, SimError> {
        self.binding
            .as_ref()
            .ok_or_else(|| SimError::MissingBinding(self.id.clone()))
    }
}

/// The contract shared by the synthetic, perturbed and endpoint simulators.
pub trait Simulator: Send + Sync {
    /// One unintervened attempt.
    fn baseline_trial(&self, problem: &SimProblem, seed: u64) -> Result<TrialOutcome, SimError>;

    /// One attempt with every concept in `concepts` set to mastered.
    fn do_trial(
        &self,
        problem: &SimProblem,
        concepts: &[String],
        seed: u64,
    ) -> Result<TrialOutcome, SimError>;

    fn concept_gap(
        &self,
        problem: &SimProblem,
        failed_answer: &str,
        seed: u64,
    ) -> Result<GapReport, SimError>;

    fn lens_trial(
        &self,
        problem: &SimProblem,
        lens: Lens,
        seed: u64,
    ) -> Result<TrialOutcome, SimError>;

    /// Whether `do_trial` can act on this concept name.
    fn resolves(&self, _problem: &SimProblem, _concept: &str) -> bool {
        true
    }

    /// Nesting depth of perturbation wrappers, used to separate their coins.
    fn perturb_depth(&self) -> u64 {
        0
    }
}

impl<S: Simulator + ?Sized> Simulator for std::sync::Arc<S> {
    fn baseline_trial(&self, problem: &SimProblem, seed: u64) -> Result<TrialOutcome, SimError> {
        (**self).baseline_trial(problem, seed)
    }

    fn do_trial(
        &self,
        problem: &SimProblem,
        concepts: &[String],
        seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        (**self).do_trial(problem, concepts, seed)
    }

    fn concept_gap(
        &self,
        problem: &SimProblem,
        failed_answer: &str,
        seed: u64,
    ) -> Result<GapReport, SimError> {
        (**self).concept_gap(problem, failed_answer, seed)
    }

    fn lens_trial(
        &self,
        problem: &SimProblem,
        lens: Lens,
        seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        (**self).lens_trial(problem, lens, seed)
    }

    fn resolves(&self, problem: &SimProblem, concept: &str) -> bool {
        (**self).resolves(problem, concept)
    }

    fn perturb_depth(&self) -> u64 {
        (**self).perturb_depth()
    }
}
