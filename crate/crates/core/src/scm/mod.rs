//! Ground-truth structural causal models.
//!
//! [`DiscreteStudentScm`] is the binary concept-mastery model with a latent
//! difficulty confounder; it supports exact enumeration of observational and
//! interventional quantities. [`LinearSvarScm`] is the linear-Gaussian
//! structural VAR used for trajectory and identifiability experiments.

mod discrete;
mod linear;

pub use discrete::{
    sample_do, sample_observational, DiscreteStudentScm, LatentDifficulty, MasteryLink,
    OutcomeLink, Sample, MAX_ENUMERATED_CONCEPTS,
};
pub use linear::{
    nonidentifiability_witness, reduced_form_covariance, simulate_svar, simulate_svar_from,
    witness_with_rotation, Clamp, ClampSolver, LinearSvarScm, Trajectory, MAX_CONDITION_NUMBER,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("concept index {index} out of range for {n_concepts} concepts")]
    UnknownConcept { index: usize, n_concepts: usize },
    #[error("intervention value must be 0 or 1, got {0}")]
    InvalidValue(u8),
    #[error("exact enumeration supports at most {max} concepts, model has {n}")]
    EnumerationCap { n: usize, max: usize },
    #[error("sample count must be at least 1")]
    EmptyDraw,
    #[error("conditioning event has zero probability: {0}")]
    ZeroProbability(String),
    #[error("singular contemporaneous matrix")]
    Singular,
    #[error("contemporaneous matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("system is not stationary (companion spectral radius {0:.6})")]
    NonStationary(f64),
    #[error("intervention schedule out of range: {0}")]
    Schedule(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
