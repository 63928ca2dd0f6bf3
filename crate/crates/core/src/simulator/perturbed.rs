use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GapReport, Lens, SimError, SimProblem, Simulator, TrialOutcome};
use crate::rng::{derive_seed, substream};

const COIN_TAG: &str = "perturb-coin";
const TV_TAG: &str = "tv-gap";

/// Total-variation budget of a simulator's interventional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimulatorFidelity {
    delta_m: f64,
}

impl SimulatorFidelity {
    pub fn new(delta_m: f64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&delta_m) {
            return Err(SimError::InvalidFidelity(delta_m));
        }
        Ok(Self { delta_m })
    }

    pub fn delta(self) -> f64 {
        self.delta_m
    }
}

impl TryFrom<f64> for SimulatorFidelity {
    type Error = SimError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SimulatorFidelity> for f64 {
    fn from(f: SimulatorFidelity) -> Self {
        f.delta_m
    }
}

/// Wraps a simulator so that each do-trial falls back to a baseline trial
/// with probability `delta`. All other trials pass through unchanged.
pub struct PerturbedSimulator<S> {
    inner: S,
    fidelity: SimulatorFidelity,
}

pub fn perturb<S: Simulator>(inner: S, fidelity: SimulatorFidelity) -> PerturbedSimulator<S> {
    PerturbedSimulator { inner, fidelity }
}

impl<S: Simulator> PerturbedSimulator<S> {
    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn fidelity(&self) -> SimulatorFidelity {
        self.fidelity
    }
}

impl<S: Simulator> Simulator for PerturbedSimulator<S> {
    fn baseline_trial(&self, problem: &SimProblem, seed: u64) -> Result<TrialOutcome, SimError> {
        self.inner.baseline_trial(problem, seed)
    }

    fn do_trial(
        &self,
        problem: &SimProblem,
        concepts: &[String],
        seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        if concepts.is_empty() {
            return Err(SimError::EmptyConceptSet);
        }
        let coin: f64 = substream(seed, COIN_TAG, self.perturb_depth()).random();
        if coin < self.fidelity.delta() {
            self.inner.baseline_trial(problem, seed)
        } else {
            self.inner.do_trial(problem, concepts, seed)
        }
    }

    fn concept_gap(
        &self,
        problem: &SimProblem,
        failed_answer: &str,
        seed: u64,
    ) -> Result<GapReport, SimError> {
        self.inner.concept_gap(problem, failed_answer, seed)
    }

    fn lens_trial(
        &self,
        problem: &SimProblem,
        lens: Lens,
        seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        self.inner.lens_trial(problem, lens, seed)
    }

    fn resolves(&self, problem: &SimProblem, concept: &str) -> bool {
        self.inner.resolves(problem, concept)
    }

    fn perturb_depth(&self) -> u64 {
        self.inner.perturb_depth() + 1
    }
}

/// Estimated total-variation distance between two binary do-distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvGap {
    pub tv: f64,
    pub se: f64,
    pub rate_a: f64,
    pub rate_b: f64,
    pub trials: usize,
}

/// Runs `trials` do-trials on each simulator, trial `i` sharing one seed
/// across both.
pub fn measure_tv_gap(
    sim_a: &dyn Simulator,
    sim_b: &dyn Simulator,
    problem: &SimProblem,
    concepts: &[String],
    trials: usize,
    seed: u64,
) -> Result<TvGap, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let pairs = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, TV_TAG, i);
            Ok((
                sim_a.do_trial(problem, concepts, s)?.correct,
                sim_b.do_trial(problem, concepts, s)?.correct,
            ))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let n = trials as f64;
    let rate_a = pairs.iter().filter(|p| p.0).count() as f64 / n;
    let rate_b = pairs.iter().filter(|p| p.1).count() as f64 / n;
    let se = (rate_a * (1.0 - rate_a) / n + rate_b * (1.0 - rate_b) / n).sqrt();
    Ok(TvGap {
        tv: (rate_a - rate_b).abs(),
        se,
        rate_a,
        rate_b,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_bounds() {
        assert!(SimulatorFidelity::new(-0.1).is_err());
        assert!(SimulatorFidelity::new(1.1).is_err());
        assert!(SimulatorFidelity::new(f64::NAN).is_err());
        assert_eq!(SimulatorFidelity::new(0.25).unwrap().delta(), 0.25);
        assert!(serde_json::from_str::<SimulatorFidelity>("2.0").is_err());
    }
}
