use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{logistic, ScmError};
use crate::rng::{substream, StreamRng};

/// Largest concept count for which exact enumeration is offered.
pub const MAX_ENUMERATED_CONCEPTS: usize = 16;

const SAMPLE_TAG: &str = "scm-draw";

/// `P(m_j = 1 | D) = logistic(a - b * D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasteryLink {
    pub a: f64,
    pub b: f64,
}

/// `P(p = 1 | m, D) = logistic(w0 + sum_j w_j m_j - w_d * D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLink {
    pub w0: f64,
    pub w: Vec<f64>,
    pub w_d: f64,
}

/// Binary student model: latent difficulty `D` drives every concept mastery
/// `m_j` and the outcome `p`; masteries drive `p`; there are no edges between
/// concepts, so `{D}` is a valid adjustment set for every concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscreteScm")]
pub struct DiscreteStudentScm {
    n_concepts: usize,
    difficulty_support: Vec<f64>,
    difficulty_pmf: Vec<f64>,
    mastery_link: Vec<MasteryLink>,
    outcome_link: OutcomeLink,
}

#[derive(Deserialize)]
struct RawDiscreteScm {
    n_concepts: usize,
    difficulty_support: Vec<f64>,
    difficulty_pmf: Vec<f64>,
    mastery_link: Vec<MasteryLink>,
    outcome_link: OutcomeLink,
}

impl TryFrom<RawDiscreteScm> for DiscreteStudentScm {
    type Error = ScmError;

    fn try_from(raw: RawDiscreteScm) -> Result<Self, Self::Error> {
        if raw.mastery_link.len() != raw.n_concepts {
            return Err(ScmError::Invalid(format!(
                "n_concepts is {} but {} mastery links given",
                raw.n_concepts,
                raw.mastery_link.len()
            )));
        }
        Self::new(
            raw.difficulty_support,
            raw.difficulty_pmf,
            raw.mastery_link,
            raw.outcome_link,
        )
    }
}

/// Difficulty level index of a draw. Estimators must not read it; it is
/// exposed only for oracle adjustment in tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentDifficulty(usize);

impl LatentDifficulty {
    pub fn oracle_level(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub masteries: Vec<bool>,
    pub outcome: bool,
    pub difficulty: LatentDifficulty,
}

impl DiscreteStudentScm {
    pub fn new(
        difficulty_support: Vec<f64>,
        difficulty_pmf: Vec<f64>,
        mastery_link: Vec<MasteryLink>,
        outcome_link: OutcomeLink,
    ) -> Result<Self, ScmError> {
        let n = mastery_link.len();
        if n == 0 || n > MAX_ENUMERATED_CONCEPTS {
            return Err(ScmError::Invalid(format!(
                "n_concepts must be in 1..={MAX_ENUMERATED_CONCEPTS}, got {n}"
            )));
        }
        if outcome_link.w.len() != n {
            return Err(ScmError::Invalid(format!(
                "outcome link has {} concept weights for {n} concepts",
                outcome_link.w.len()
            )));
        }
        if difficulty_support.is_empty() || difficulty_support.len() != difficulty_pmf.len() {
            return Err(ScmError::Invalid(
                "difficulty support and pmf must be nonempty and of equal length".into(),
            ));
        }
        if difficulty_support.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(ScmError::Invalid(
                "difficulty levels must lie in [0, 1]".into(),
            ));
        }
        if difficulty_pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ScmError::Invalid(
                "difficulty pmf entries must be nonnegative".into(),
            ));
        }
        let total: f64 = difficulty_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ScmError::Invalid(format!(
                "difficulty pmf sums to {total}, expected 1"
            )));
        }
        let finite = mastery_link
            .iter()
            .all(|l| l.a.is_finite() && l.b.is_finite())
            && outcome_link.w.iter().all(|w| w.is_finite())
            && outcome_link.w0.is_finite()
            && outcome_link.w_d.is_finite();
        if !finite {
            return Err(ScmError::Invalid("link parameters must be finite".into()));
        }
        Ok(Self {
            n_concepts: n,
            difficulty_support,
            difficulty_pmf,
            mastery_link,
            outcome_link,
        })
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn difficulty_support(&self) -> &[f64] {
        &self.difficulty_support
    }

    pub fn difficulty_pmf(&self) -> &[f64] {
        &self.difficulty_pmf
    }

    pub fn mastery_links(&self) -> &[MasteryLink] {
        &self.mastery_link
    }

    pub fn outcome_link(&self) -> &OutcomeLink {
        &self.outcome_link
    }

    /// Copy of the model with one extra concept that has no edge into `p`.
    pub fn with_null_concept(&self, link: MasteryLink) -> Result<Self, ScmError> {
        let mut mastery = self.mastery_link.clone();
        mastery.push(link);
        let mut outcome = self.outcome_link.clone();
        outcome.w.push(0.0);
        Self::new(
            self.difficulty_support.clone(),
            self.difficulty_pmf.clone(),
            mastery,
            outcome,
        )
    }

    pub fn mastery_probability(&self, concept: usize, level: usize) -> f64 {
        let link = self.mastery_link[concept];
        logistic(link.a - link.b * self.difficulty_support[level])
    }

    /// `P(m_j = 1)` with `D` marginalized out.
    pub fn mastery_marginal(&self, concept: usize) -> Result<f64, ScmError> {
        self.check_concept(concept)?;
        Ok(self
            .difficulty_pmf
            .iter()
            .enumerate()
            .map(|(d, w)| w * self.mastery_probability(concept, d))
            .sum())
    }

    fn outcome_logit(&self, mask: u32, level: usize) -> f64 {
        let link = &self.outcome_link;
        let mut logit = link.w0 - link.w_d * self.difficulty_support[level];
        for (j, w) in link.w.iter().enumerate() {
            if mask >> j & 1 == 1 {
                logit += w;
            }
        }
        logit
    }

    fn check_concept(&self, concept: usize) -> Result<(), ScmError> {
        if concept >= self.n_concepts {
            return Err(ScmError::UnknownConcept {
                index: concept,
                n_concepts: self.n_concepts,
            });
        }
        Ok(())
    }

    fn clamp_vector(&self, clamps: &BTreeMap<usize, bool>) -> Result<Vec<Option<bool>>, ScmError> {
        let mut out = vec![None; self.n_concepts];
        for (&j, &v) in clamps {
            self.check_concept(j)?;
            out[j] = Some(v);
        }
        Ok(out)
    }

    /// One draw. `D`, then one uniform per concept (drawn even when the concept
    /// is clamped, so clamped and unclamped runs share a stream), then the
    /// outcome uniform.
    pub(crate) fn draw(
        &self,
        clamps: &[Option<bool>],
        logit_offset: f64,
        rng: &mut StreamRng,
    ) -> Sample {
        let u: f64 = rng.random();
        let mut level = self.difficulty_pmf.len() - 1;
        let mut acc = 0.0;
        for (d, p) in self.difficulty_pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                level = d;
                break;
            }
        }
        let mut masteries = Vec::with_capacity(self.n_concepts);
        let mut mask = 0u32;
        for (j, clamp) in clamps.iter().enumerate() {
            let uj: f64 = rng.random();
            let m = match clamp {
                Some(v) => *v,
                None => uj < self.mastery_probability(j, level),
            };
            if m {
                mask |= 1 << j;
            }
            masteries.push(m);
        }
        let up: f64 = rng.random();
        let outcome = up < logistic(self.outcome_logit(mask, level) + logit_offset);
        Sample {
            masteries,
            outcome,
            difficulty: LatentDifficulty(level),
        }
    }

    /// Single draw under the given clamps and outcome log-odds offset.
    pub fn draw_with(
        &self,
        clamps: &BTreeMap<usize, bool>,
        logit_offset: f64,
        rng: &mut StreamRng,
    ) -> Result<Sample, ScmError> {
        let clamps = self.clamp_vector(clamps)?;
        Ok(self.draw(&clamps, logit_offset, rng))
    }

    /// Visits every `(level, mastery mask)` state consistent with the clamps,
    /// passing the state's probability mass and `P(p = 1 | state)`.
    fn for_each_state(
        &self,
        clamps: &[Option<bool>],
        logit_offset: f64,
        mut visit: impl FnMut(usize, u32, f64, f64),
    ) {
        let n = self.n_concepts;
        for (level, &pd) in self.difficulty_pmf.iter().enumerate() {
            if pd == 0.0 {
                continue;
            }
            let q: Vec<f64> = (0..n).map(|j| self.mastery_probability(j, level)).collect();
            'mask: for mask in 0u32..(1u32 << n) {
                let mut weight = pd;
                for j in 0..n {
                    let bit = mask >> j & 1 == 1;
                    match clamps[j] {
                        Some(v) if v != bit => continue 'mask,
                        Some(_) => {}
                        None => weight *= if bit { q[j] } else { 1.0 - q[j] },
                    }
                }
                let p = logistic(self.outcome_logit(mask, level) + logit_offset);
                visit(level, mask, weight, p);
            }
        }
    }

    fn check_enumerable(&self) -> Result<(), ScmError> {
        if self.n_concepts > MAX_ENUMERATED_CONCEPTS {
            return Err(ScmError::EnumerationCap {
                n: self.n_concepts,
                max: MAX_ENUMERATED_CONCEPTS,
            });
        }
        Ok(())
    }

    /// Exact `P(p = 1 | do(clamps))`; an empty map gives the observational marginal.
    pub fn interventional_rate(&self, clamps: &BTreeMap<usize, bool>) -> Result<f64, ScmError> {
        self.check_enumerable()?;
        let clamps = self.clamp_vector(clamps)?;
        let mut total = 0.0;
        self.for_each_state(&clamps, 0.0, |_, _, w, p| total += w * p);
        Ok(total)
    }

    /// Exact `P(p = 1)` with the outcome log-odds shifted by `logit_offset`.
    pub fn outcome_rate_with_offset(&self, logit_offset: f64) -> Result<f64, ScmError> {
        self.check_enumerable()?;
        let clamps = vec![None; self.n_concepts];
        let mut total = 0.0;
        self.for_each_state(&clamps, logit_offset, |_, _, w, p| total += w * p);
        Ok(total)
    }

    /// Exact observational `P(p = 1)`.
    pub fn outcome_marginal(&self) -> Result<f64, ScmError> {
        self.outcome_rate_with_offset(0.0)
    }

    /// Exact `P(p = 1 | do(m_concept = value))`.
    pub fn interventional_distribution(&self, concept: usize, value: u8) -> Result<f64, ScmError> {
        let v = binary_value(value)?;
        self.check_concept(concept)?;
        self.interventional_rate(&BTreeMap::from([(concept, v)]))
    }

    /// `sum_D P(p = 1 | m_concept = value, D) P(D)`, with the conditional read off
    /// the observational joint rather than the intervened mechanism.
    pub fn backdoor_adjusted(&self, concept: usize, value: u8) -> Result<f64, ScmError> {
        let v = binary_value(value)?;
        self.check_concept(concept)?;
        self.check_enumerable()?;
        let levels = self.difficulty_pmf.len();
        let mut joint_mass = vec![0.0; levels];
        let mut joint_success = vec![0.0; levels];
        let free = vec![None; self.n_concepts];
        self.for_each_state(&free, 0.0, |level, mask, w, p| {
            if (mask >> concept & 1 == 1) == v {
                joint_mass[level] += w;
                joint_success[level] += w * p;
            }
        });
        let mut total = 0.0;
        for (level, &pd) in self.difficulty_pmf.iter().enumerate() {
            if pd == 0.0 {
                continue;
            }
            if joint_mass[level] <= 0.0 {
                return Err(ScmError::ZeroProbability(format!(
                    "P(m_{concept} = {value}, D = level {level}) is zero"
                )));
            }
            total += pd * joint_success[level] / joint_mass[level];
        }
        Ok(total)
    }

    /// `E[p | do(m=1)] - E[p | do(m=0)]`.
    pub fn true_effect(&self, concept: usize) -> Result<f64, ScmError> {
        Ok(self.interventional_distribution(concept, 1)?
            - self.interventional_distribution(concept, 0)?)
    }

    /// Estimand of the interventional capability probe:
    /// `P(p = 1 | do(m = 1)) - P(p = 1)`.
    pub fn icp_target(&self, concept: usize) -> Result<f64, ScmError> {
        Ok(self.interventional_distribution(concept, 1)? - self.outcome_marginal()?)
    }

    /// Observational `P(p = 1 | m_concept = value)`.
    pub fn observational_conditional(&self, concept: usize, value: u8) -> Result<f64, ScmError> {
        let v = binary_value(value)?;
        self.check_concept(concept)?;
        self.check_enumerable()?;
        let free = vec![None; self.n_concepts];
        let mut mass = 0.0;
        let mut success = 0.0;
        self.for_each_state(&free, 0.0, |_, mask, w, p| {
            if (mask >> concept & 1 == 1) == v {
                mass += w;
                success += w * p;
            }
        });
        if mass <= 0.0 {
            return Err(ScmError::ZeroProbability(format!(
                "P(m_{concept} = {value}) is zero"
            )));
        }
        Ok(success / mass)
    }

    /// Exact `E[p | m=1] - E[p | m=0]`, the quantity a naive observational
    /// comparison converges to.
    pub fn observational_contrast(&self, concept: usize) -> Result<f64, ScmError> {
        Ok(self.observational_conditional(concept, 1)?
            - self.observational_conditional(concept, 0)?)
    }
}

fn binary_value(value: u8) -> Result<bool, ScmError> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(ScmError::InvalidValue(other)),
    }
}

/// `count` observational draws; draw `i` uses substream `(seed, "scm-draw", i)`.
pub fn sample_observational(
    scm: &DiscreteStudentScm,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample>, ScmError> {
    sample_do(scm, &BTreeMap::new(), count, seed)
}

/// `count` draws with the given masteries clamped. Shares its stream layout
/// with [`sample_observational`], so an empty clamp map reproduces it exactly.
pub fn sample_do(
    scm: &DiscreteStudentScm,
    clamped: &BTreeMap<usize, bool>,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample>, ScmError> {
    if count == 0 {
        return Err(ScmError::EmptyDraw);
    }
    let clamps = scm.clamp_vector(clamped)?;
    Ok((0..count as u64)
        .map(|i| {
            let mut rng = substream(seed, SAMPLE_TAG, i);
            scm.draw(&clamps, 0.0, &mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> DiscreteStudentScm {
        DiscreteStudentScm::new(
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![MasteryLink { a: 0.0, b: 4.0 }; 2],
            OutcomeLink {
                w0: -1.0,
                w: vec![2.0, 2.0],
                w_d: 3.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_pmf() {
        let err = DiscreteStudentScm::new(
            vec![0.0, 1.0],
            vec![0.5, 0.6],
            vec![MasteryLink { a: 0.0, b: 0.0 }],
            OutcomeLink {
                w0: 0.0,
                w: vec![1.0],
                w_d: 0.0,
            },
        );
        assert!(matches!(err, Err(ScmError::Invalid(_))));
        let err = DiscreteStudentScm::new(
            vec![0.0, 1.0],
            vec![1.5, -0.5],
            vec![MasteryLink { a: 0.0, b: 0.0 }],
            OutcomeLink {
                w0: 0.0,
                w: vec![1.0],
                w_d: 0.0,
            },
        );
        assert!(matches!(err, Err(ScmError::Invalid(_))));
    }

    #[test]
    fn rejects_too_many_concepts() {
        let err = DiscreteStudentScm::new(
            vec![0.5],
            vec![1.0],
            vec![MasteryLink { a: 0.0, b: 0.0 }; 17],
            OutcomeLink {
                w0: 0.0,
                w: vec![0.0; 17],
                w_d: 0.0,
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_draws_rejected() {
        assert_eq!(
            sample_observational(&fixture(), 0, 1),
            Err(ScmError::EmptyDraw)
        );
    }

    #[test]
    fn unknown_concept_in_clamp() {
        let clamps = BTreeMap::from([(5usize, true)]);
        assert!(matches!(
            sample_do(&fixture(), &clamps, 3, 1),
            Err(ScmError::UnknownConcept { index: 5, .. })
        ));
    }

    #[test]
    fn value_outside_binary_rejected() {
        assert_eq!(
            fixture().interventional_distribution(0, 2),
            Err(ScmError::InvalidValue(2))
        );
    }

    #[test]
    fn json_round_trip_validates() {
        let scm = fixture();
        let text = serde_json::to_string(&scm).unwrap();
        let back: DiscreteStudentScm = serde_json::from_str(&text).unwrap();
        assert_eq!(scm, back);
        let broken = text.replace("\"n_concepts\":2", "\"n_concepts\":3");
        assert!(serde_json::from_str::<DiscreteStudentScm>(&broken).is_err());
    }

    #[test]
    fn clamped_coordinates_are_fixed() {
        let clamps = BTreeMap::from([(1usize, true)]);
        let draws = sample_do(&fixture(), &clamps, 200, 3).unwrap();
        assert!(draws.iter().all(|s| s.masteries[1]));
    }
}
