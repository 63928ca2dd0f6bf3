//! Ready-made models and problem suites for tests, experiments and the CLI.

use std::collections::BTreeMap;

use rand::Rng;

use crate::retrieval::CorpusDoc;
use crate::rng::substream;
use crate::scm::{DiscreteStudentScm, MasteryLink, OutcomeLink, ScmError};
use crate::simulator::{Lens, ScmBinding, SimProblem};

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn scm(support: &[f64], links: &[(f64, f64)], w0: f64, w: &[f64], w_d: f64) -> DiscreteStudentScm {
    let pmf = vec![1.0 / support.len() as f64; support.len()];
    DiscreteStudentScm::new(
        support.to_vec(),
        pmf,
        links.iter().map(|&(a, b)| MasteryLink { a, b }).collect(),
        OutcomeLink {
            w0,
            w: w.to_vec(),
            w_d,
        },
    )
    .expect("fixture parameters are valid")
}

/// Two identical concepts, strongly confounded by a two-level difficulty.
pub fn confounded_pair() -> DiscreteStudentScm {
    confounded_pair_with(3.0, 4.0)
}

/// [`confounded_pair`] with the difficulty weights on the outcome (`w_d`) and
/// on mastery (`b`) replaced.
pub fn confounded_pair_with(w_d: f64, b: f64) -> DiscreteStudentScm {
    scm(&[0.0, 1.0], &[(0.0, b), (0.0, b)], -1.0, &[2.0, 2.0], w_d)
}

/// [`confounded_pair`] with difficulty cut off from everything.
pub fn null_confounding_pair() -> DiscreteStudentScm {
    confounded_pair_with(0.0, 0.0)
}

/// One unconfounded concept with a true effect of 0.4 (0.3 to 0.7).
pub fn single_effect() -> DiscreteStudentScm {
    scm(
        &[0.0],
        &[(0.0, 0.0)],
        logit(0.3),
        &[logit(0.7) - logit(0.3)],
        0.0,
    )
}

/// Never mastered, always solved when activated, never solved otherwise.
pub fn deterministic_single() -> DiscreteStudentScm {
    scm(&[0.0], &[(-50.0, 0.0)], -50.0, &[100.0], 0.0)
}

/// Three concepts with mastery marginals 0.9, 0.5 and 0.1.
pub fn mastery_spread() -> DiscreteStudentScm {
    scm(
        &[0.0, 1.0],
        &[(logit(0.9), 0.0), (0.0, 0.0), (logit(0.1), 0.0)],
        -1.0,
        &[1.5, 0.5, 2.5],
        1.0,
    )
}

/// Four concepts with mixed-sign effects over a three-level difficulty.
pub fn mixed_signs() -> DiscreteStudentScm {
    scm(
        &[0.0, 0.5, 1.0],
        &[(1.0, 2.0), (-0.5, 1.0), (0.5, 3.0), (2.0, 0.5)],
        -0.5,
        &[1.2, -0.8, 2.0, 0.0],
        2.0,
    )
}

/// Models used for the exact backdoor check.
pub fn backdoor_fixtures() -> Vec<(&'static str, DiscreteStudentScm)> {
    vec![
        ("confounded-pair", confounded_pair()),
        ("null-confounding", null_confounding_pair()),
        ("single-effect", single_effect()),
        ("mastery-spread", mastery_spread()),
        ("mixed-signs", mixed_signs()),
        ("latent-knowledge", latent_knowledge_scm(0.0, 0.0, 0.0)),
    ]
}

/// Only the two-concept combination `{a, b}` solves; the third concept is inert.
pub fn pair_threshold_problem() -> SimProblem {
    let model = scm(
        &[0.0],
        &[(-50.0, 0.0), (-50.0, 0.0), (-50.0, 0.0)],
        -60.0,
        &[40.0, 40.0, 0.0],
        0.0,
    );
    problem(
        "pair-threshold",
        "Find the value using both tools.",
        "general",
        ScmBinding::new(model, names(&["a", "b", "c"])).expect("names match"),
    )
}

/// Hopeless problem that only the `lens` perspective solves.
pub fn lens_saturating_problem(lens: Lens) -> SimProblem {
    let mut binding = no_knowledge_binding();
    binding.lens_modifiers.insert(lens, 60.0);
    problem(
        "lens-saturating",
        "Show the extremal configuration.",
        "combinatorics",
        binding,
    )
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn problem(id: &str, statement: &str, domain: &str, binding: ScmBinding) -> SimProblem {
    SimProblem {
        id: id.to_string(),
        statement: statement.to_string(),
        gold_answer: "42".to_string(),
        domain: domain.to_string(),
        binding: Some(binding),
    }
}

const CONCEPTS: [(&str, &str, &str); 12] = [
    (
        "Vieta's Formulas",
        "algebra",
        "sum and product of polynomial roots",
    ),
    (
        "AM-GM Inequality",
        "algebra",
        "arithmetic geometric mean bound",
    ),
    (
        "Chinese Remainder Theorem",
        "number theory",
        "simultaneous congruences moduli",
    ),
    (
        "Fermat's Little Theorem",
        "number theory",
        "prime modulus power residue",
    ),
    (
        "Stars and Bars",
        "combinatorics",
        "distribute identical objects into bins",
    ),
    (
        "Inclusion-Exclusion",
        "combinatorics",
        "count union overlapping sets",
    ),
    ("Law of Cosines", "geometry", "triangle side opposite angle"),
    (
        "Power of a Point",
        "geometry",
        "secant tangent circle lengths",
    ),
    (
        "Telescoping Sums",
        "algebra",
        "consecutive terms cancel partial fractions",
    ),
    (
        "Euler's Totient",
        "number theory",
        "count integers coprime residues",
    ),
    (
        "Generating Functions",
        "combinatorics",
        "coefficient extraction formal series",
    ),
    (
        "Shoelace Formula",
        "geometry",
        "polygon area from vertex coordinates",
    ),
];

/// Latent difficulty support used by the generated suites.
const SUITE_SUPPORT: [f64; 3] = [0.0, 0.5, 1.0];

/// Key concept rarely mastered and nearly decisive; two inert distractors,
/// one diagnosed MEDIUM and one HIGH.
fn latent_knowledge_scm(da: f64, dw0: f64, dw: f64) -> DiscreteStudentScm {
    scm(
        &SUITE_SUPPORT,
        &[(-3.0 + da, 2.0), (0.0, 0.0), (3.0, 0.0)],
        -4.0 + dw0,
        &[7.5 + dw, 0.0, 0.0],
        1.0,
    )
}

fn no_knowledge_binding() -> ScmBinding {
    let model = scm(
        &SUITE_SUPPORT,
        &[(0.0, 0.0), (-1.0, 1.0)],
        -6.0,
        &[0.0, 0.0],
        1.0,
    );
    ScmBinding::new(model, names(&["Law of Cosines", "Inclusion-Exclusion"])).expect("names match")
}

fn pick_concepts(rng: &mut impl Rng, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..CONCEPTS.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn statement_for(key: usize, i: usize) -> String {
    let (name, _, words) = CONCEPTS[key];
    format!("Problem {i}: a question where {words} matters ({name}).")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    /// Low baseline, one concept with a large effect.
    Latent,
    /// High baseline.
    Easy,
    /// Nothing helps.
    NoKnowledge,
    /// Nothing but one lens helps.
    LensOnly,
}

/// Kind of problem `i` in [`latent_knowledge_suite`]: half latent, a fifth
/// easy, the rest split between no-knowledge and lens-only.
pub fn suite_kind(i: usize) -> SuiteKind {
    match i % 10 {
        0..=4 => SuiteKind::Latent,
        5 | 6 => SuiteKind::Easy,
        7 | 8 => SuiteKind::NoKnowledge,
        _ => SuiteKind::LensOnly,
    }
}

/// `n` problems with parameters jittered from `seed`.
pub fn latent_knowledge_suite(n: usize, seed: u64) -> Vec<SimProblem> {
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, "latent-suite", i as u64);
            let id = format!("lk-{i:03}");
            let picks = pick_concepts(&mut rng, 3);
            let domain = CONCEPTS[picks[0]].1;
            let statement = statement_for(picks[0], i);
            let concept_names: Vec<String> =
                picks.iter().map(|&k| CONCEPTS[k].0.to_string()).collect();
            let binding = match suite_kind(i) {
                SuiteKind::Latent => {
                    let model = latent_knowledge_scm(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.5..0.5),
                    );
                    let mut b = ScmBinding::new(model, concept_names).expect("names match");
                    b.gap_noise_sd = 0.3;
                    b
                }
                SuiteKind::Easy => {
                    let model = scm(
                        &SUITE_SUPPORT,
                        &[(0.0, 1.0), (1.0, 1.0), (-1.0, 1.0)],
                        3.0 + rng.random_range(-0.3..0.3),
                        &[0.5, 0.0, 0.0],
                        1.0,
                    );
                    ScmBinding::new(model, concept_names).expect("names match")
                }
                SuiteKind::NoKnowledge | SuiteKind::LensOnly => {
                    let model = scm(
                        &SUITE_SUPPORT,
                        &[(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)],
                        -6.0 + rng.random_range(-0.5..0.5),
                        &[0.0, 0.0, 0.0],
                        1.0,
                    );
                    let mut b = ScmBinding::new(model, concept_names).expect("names match");
                    if suite_kind(i) == SuiteKind::LensOnly {
                        let lens = Lens::ALL[rng.random_range(0..Lens::ALL.len())];
                        b.lens_modifiers.insert(lens, 12.0);
                    }
                    b
                }
            };
            problem(&id, &statement, domain, binding)
        })
        .collect()
}

/// Short corpus with one tagged document per concept in the vocabulary.
pub fn concept_corpus() -> Vec<CorpusDoc> {
    CONCEPTS
        .iter()
        .enumerate()
        .map(|(i, (name, domain, words))| {
            let mut meta = BTreeMap::new();
            meta.insert("domain".to_string(), serde_json::Value::from(*domain));
            CorpusDoc {
                id: format!("doc-{i:02}"),
                text: format!("Worked solution using {name}: {words}."),
                concept_tags: vec![name.to_string()],
                meta,
            }
        })
        .collect()
}

/// Outcome intercept `w0` giving baseline rate `target`, for fixed `w1`.
fn solve_w0(
    build: &dyn Fn(f64, f64) -> DiscreteStudentScm,
    w1: f64,
    target: f64,
) -> Result<f64, ScmError> {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if build(mid, w1).outcome_marginal()? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Key-concept model whose baseline rate is `baseline` and whose ICP target
/// (do-rate minus baseline) is `effect`.
pub fn calibrated_effect_scm(baseline: f64, effect: f64) -> Result<DiscreteStudentScm, ScmError> {
    let build = |w0: f64, w1: f64| {
        scm(
            &SUITE_SUPPORT,
            &[(-1.0, 1.5), (0.0, 0.5), (1.0, 1.0)],
            w0,
            &[w1, 0.0, 0.0],
            1.0,
        )
    };
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let w0 = solve_w0(&build, mid, baseline)?;
        if build(w0, mid).icp_target(0)? < effect {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w1 = 0.5 * (lo + hi);
    Ok(build(solve_w0(&build, w1, baseline)?, w1))
}

/// ICP targets of the RQ1 suite: evenly spaced on [0.15, 0.29].
pub fn rq1_targets(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.22];
    }
    (0..n)
        .map(|i| 0.15 + 0.14 * i as f64 / (n - 1) as f64)
        .collect()
}

/// `n` problems with baselines in [0.2, 0.4], one effective concept at the
/// targets of [`rq1_targets`] and two inert ones.
pub fn rq1_suite(n: usize, seed: u64) -> Result<Vec<SimProblem>, ScmError> {
    rq1_targets(n)
        .into_iter()
        .enumerate()
        .map(|(i, effect)| {
            let mut rng = substream(seed, "rq1-suite", i as u64);
            let baseline = rng.random_range(0.2..0.4);
            let model = calibrated_effect_scm(baseline, effect)?;
            let picks = pick_concepts(&mut rng, 3);
            let concept_names = picks.iter().map(|&k| CONCEPTS[k].0.to_string()).collect();
            let binding = ScmBinding::new(model, concept_names).expect("names match");
            Ok(problem(
                &format!("rq1-{i:03}"),
                &statement_for(picks[0], i),
                CONCEPTS[picks[0]].1,
                binding,
            ))
        })
        .collect()
}

/// Unjittered member of the latent-knowledge family.
pub fn latent_knowledge_problem() -> SimProblem {
    let mut binding = ScmBinding::new(
        latent_knowledge_scm(0.0, 0.0, 0.0),
        names(&["Vieta's Formulas", "AM-GM Inequality", "Law of Cosines"]),
    )
    .expect("names match");
    binding.gap_noise_sd = 0.3;
    problem("latent-knowledge", &statement_for(0, 0), "algebra", binding)
}

/// No concept and no lens changes the outcome.
pub fn no_knowledge_problem() -> SimProblem {
    problem(
        "no-knowledge",
        "An intractable question.",
        "geometry",
        no_knowledge_binding(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_marginals() {
        let m = mastery_spread();
        for (j, q) in [0.9, 0.5, 0.1].into_iter().enumerate() {
            assert!((m.mastery_marginal(j).unwrap() - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_effect_is_point_four() {
        let m = single_effect();
        assert!((m.true_effect(0).unwrap() - 0.4).abs() < 1e-12);
        assert!((m.icp_target(0).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn latent_rates() {
        let p = latent_knowledge_problem();
        let m = &p.binding.as_ref().unwrap().scm;
        let base = m.outcome_marginal().unwrap();
        assert!(base > 0.01 && base < 0.08, "{base}");
        assert!(m.true_effect(0).unwrap() > 0.85);
        assert_eq!(m.true_effect(1).unwrap(), 0.0);
    }

    #[test]
    fn calibration_hits_targets() {
        let m = calibrated_effect_scm(0.3, 0.2).unwrap();
        assert!((m.outcome_marginal().unwrap() - 0.3).abs() < 1e-9);
        assert!((m.icp_target(0).unwrap() - 0.2).abs() < 1e-9);
        let t = rq1_targets(67);
        assert!((t.iter().sum::<f64>() / 67.0 - 0.22).abs() < 1e-12);
    }

    #[test]
    fn suite_mix() {
        let suite = latent_knowledge_suite(100, 5);
        let latent = (0..100)
            .filter(|&i| suite_kind(i) == SuiteKind::Latent)
            .count();
        assert_eq!(latent, 50);
        assert_eq!(suite.len(), 100);
    }
}
