use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{
    ConceptDiagnosis, GapLevel, GapReport, Lens, SimError, SimProblem, Simulator, TrialOutcome,
};
use crate::rng::{substream, StreamRng};

const GAP_TAG: &str = "concept-gap";

/// Simulator backed by each problem's bound [`DiscreteStudentScm`](crate::scm::DiscreteStudentScm).
///
/// Baseline, do and lens trials with the same seed consume the same uniforms,
/// so they are coupled draws.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticSimulator;

impl SyntheticSimulator {
    pub fn new() -> Self {
        Self
    }
}

fn trial_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

impl Simulator for SyntheticSimulator {
    fn baseline_trial(&self, problem: &SimProblem, seed: u64) -> Result<TrialOutcome, SimError> {
        let binding = problem.binding()?;
        let sample = binding
            .scm
            .draw_with(&BTreeMap::new(), 0.0, &mut trial_rng(seed))?;
        Ok(TrialOutcome::synthetic(sample.outcome))
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
        let binding = problem.binding()?;
        let mut clamps = BTreeMap::new();
        for name in concepts {
            let j = binding
                .concept_index(name)
                .ok_or_else(|| SimError::UnknownConcept(name.clone()))?;
            clamps.insert(j, true);
        }
        let sample = binding.scm.draw_with(&clamps, 0.0, &mut trial_rng(seed))?;
        Ok(TrialOutcome::synthetic(sample.outcome))
    }

    fn concept_gap(
        &self,
        problem: &SimProblem,
        _failed_answer: &str,
        seed: u64,
    ) -> Result<GapReport, SimError> {
        let binding = problem.binding()?;
        let mut diagnoses = Vec::with_capacity(binding.concepts.len());
        for (j, name) in binding.concepts.iter().enumerate() {
            let q = binding.scm.mastery_marginal(j)?;
            let p = if binding.gap_noise_sd > 0.0 {
                let mut rng = substream(seed, GAP_TAG, j as u64);
                let z: f64 = rng.sample(StandardNormal);
                let logit = (q / (1.0 - q)).ln() + binding.gap_noise_sd * z;
                1.0 / (1.0 + (-logit).exp())
            } else {
                q
            };
            diagnoses.push(ConceptDiagnosis {
                concept: name.clone(),
                level: GapLevel::from_probability(p),
            });
        }
        Ok(GapReport {
            diagnoses,
            parse_warning: false,
        })
    }

    fn lens_trial(
        &self,
        problem: &SimProblem,
        lens: Lens,
        seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        let binding = problem.binding()?;
        let sample = binding.scm.draw_with(
            &BTreeMap::new(),
            binding.lens_modifier(lens),
            &mut trial_rng(seed),
        )?;
        Ok(TrialOutcome::synthetic(sample.outcome))
    }

    fn resolves(&self, problem: &SimProblem, concept: &str) -> bool {
        problem
            .binding
            .as_ref()
            .is_some_and(|b| b.concept_index(concept).is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{DiscreteStudentScm, MasteryLink, OutcomeLink};
    use crate::simulator::ScmBinding;

    fn problem(w0: f64) -> SimProblem {
        let scm = DiscreteStudentScm::new(
            vec![0.0],
            vec![1.0],
            vec![MasteryLink { a: 0.0, b: 0.0 }],
            OutcomeLink {
                w0,
                w: vec![0.0],
                w_d: 0.0,
            },
        )
        .unwrap();
        SimProblem {
            id: "p".into(),
            statement: String::new(),
            gold_answer: "42".into(),
            domain: String::new(),
            binding: Some(ScmBinding::new(scm, vec!["c".into()]).unwrap()),
        }
    }

    #[test]
    fn saturated_outcome_always_correct() {
        let p = problem(50.0);
        for seed in 0..100 {
            assert!(SyntheticSimulator.baseline_trial(&p, seed).unwrap().correct);
        }
    }

    #[test]
    fn unknown_concept_and_empty_set() {
        let p = problem(0.0);
        assert!(matches!(
            SyntheticSimulator.do_trial(&p, &["x".into()], 1),
            Err(SimError::UnknownConcept(_))
        ));
        assert!(matches!(
            SyntheticSimulator.do_trial(&p, &[], 1),
            Err(SimError::EmptyConceptSet)
        ));
    }

    #[test]
    fn missing_binding_is_an_error() {
        let mut p = problem(0.0);
        p.binding = None;
        assert!(matches!(
            SyntheticSimulator.baseline_trial(&p, 0),
            Err(SimError::MissingBinding(_))
        ));
    }
}
