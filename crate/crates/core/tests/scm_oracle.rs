use std::collections::BTreeMap;

use cika::fixtures::{backdoor_fixtures, confounded_pair};
use cika::scm::{
    logistic, sample_do, sample_observational, DiscreteStudentScm, MasteryLink, OutcomeLink,
};
use proptest::prelude::*;

/// Direct sum over (D, m1, m2) for the two-concept confounded pair.
struct PairOracle {
    p_outcome: f64,
    do0: f64,
    do1: f64,
    p_m1: f64,
    obs1: f64,
    obs0: f64,
}

fn pair_oracle(w_d: f64, b: f64) -> PairOracle {
    let outcome = |m1: f64, m2: f64, d: f64| logistic(-1.0 + 2.0 * m1 + 2.0 * m2 - w_d * d);
    let bern = |p: f64, x: f64| if x == 1.0 { p } else { 1.0 - p };
    let mut p_outcome = 0.0;
    let mut do0 = 0.0;
    let mut do1 = 0.0;
    let mut p_m1 = 0.0;
    let mut joint_m1 = [0.0; 2];
    let mut mass_m1 = [0.0; 2];
    for d in [0.0, 1.0] {
        let pd = 0.5;
        let pm = logistic(-b * d);
        for m2 in [0.0, 1.0] {
            do0 += pd * bern(pm, m2) * outcome(0.0, m2, d);
            do1 += pd * bern(pm, m2) * outcome(1.0, m2, d);
            for m1 in [0.0, 1.0] {
                let w = pd * bern(pm, m1) * bern(pm, m2);
                let y = outcome(m1, m2, d);
                p_outcome += w * y;
                p_m1 += w * m1;
                joint_m1[m1 as usize] += w * y;
                mass_m1[m1 as usize] += w;
            }
        }
    }
    PairOracle {
        p_outcome,
        do0,
        do1,
        p_m1,
        obs1: joint_m1[1] / mass_m1[1],
        obs0: joint_m1[0] / mass_m1[0],
    }
}

const P_OUTCOME: f64 = 0.34631292084561743;
const DO0: f64 = 0.2599033574984379;
const DO1: f64 = 0.4839341854728989;
const TRUE_EFFECT: f64 = 0.224030827974461;
const OBS_CONTRAST: f64 = 0.6351488879843884;
const P_M1: f64 = 0.2589931049810458;

#[test]
fn oracle_matches_frozen_values() {
    let o = pair_oracle(3.0, 4.0);
    assert!((o.p_outcome - P_OUTCOME).abs() < 1e-15);
    assert!((o.do0 - DO0).abs() < 1e-15);
    assert!((o.do1 - DO1).abs() < 1e-15);
    assert!((o.do1 - o.do0 - TRUE_EFFECT).abs() < 1e-14);
    assert!((o.obs1 - o.obs0 - OBS_CONTRAST).abs() < 1e-14);
    assert!((o.p_m1 - P_M1).abs() < 1e-15);
}

#[test]
fn confounded_pair_reproduces_oracle() {
    let scm = confounded_pair();
    assert!((scm.outcome_marginal().unwrap() - P_OUTCOME).abs() < 1e-12);
    assert!((scm.interventional_distribution(0, 0).unwrap() - DO0).abs() < 1e-12);
    assert!((scm.interventional_distribution(0, 1).unwrap() - DO1).abs() < 1e-12);
    assert!((scm.true_effect(0).unwrap() - TRUE_EFFECT).abs() < 1e-12);
    assert!((scm.icp_target(0).unwrap() - (DO1 - P_OUTCOME)).abs() < 1e-12);
    assert!((scm.observational_contrast(0).unwrap() - OBS_CONTRAST).abs() < 1e-12);
    assert!((scm.mastery_marginal(0).unwrap() - P_M1).abs() < 1e-12);
}

#[test]
fn confounding_inflates_the_observational_contrast() {
    let scm = confounded_pair();
    let bias = scm.observational_contrast(0).unwrap() - scm.true_effect(0).unwrap();
    assert!(bias > 0.4);
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let scm = confounded_pair();
    let n = 200_000;
    let draws = sample_observational(&scm, n, 17).unwrap();
    let rate = draws.iter().filter(|s| s.outcome).count() as f64 / n as f64;
    let se = (P_OUTCOME * (1.0 - P_OUTCOME) / n as f64).sqrt();
    assert!((rate - P_OUTCOME).abs() < 4.0 * se);

    let clamps = BTreeMap::from([(0, true)]);
    let draws = sample_do(&scm, &clamps, n, 18).unwrap();
    assert!(draws.iter().all(|s| s.masteries[0]));
    let rate = draws.iter().filter(|s| s.outcome).count() as f64 / n as f64;
    let se = (DO1 * (1.0 - DO1) / n as f64).sqrt();
    assert!((rate - DO1).abs() < 4.0 * se);
}

#[test]
fn backdoor_identity_on_fixtures() {
    for (name, scm) in backdoor_fixtures() {
        for j in 0..scm.n_concepts() {
            for v in [0, 1] {
                let direct = scm.interventional_distribution(j, v).unwrap();
                let adjusted = scm.backdoor_adjusted(j, v).unwrap();
                assert!(
                    (direct - adjusted).abs() < 1e-12,
                    "{name} concept {j} value {v}"
                );
            }
        }
    }
}

fn arb_scm() -> impl Strategy<Value = DiscreteStudentScm> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(k, levels)| {
        (
            prop::collection::vec(0.0f64..=1.0, levels),
            prop::collection::vec(0.05f64..1.0, levels),
            prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), k),
            -4.0f64..4.0,
            prop::collection::vec(-4.0f64..4.0, k),
            -4.0f64..4.0,
        )
            .prop_map(|(support, weights, links, w0, w, w_d)| {
                let total: f64 = weights.iter().sum();
                let mut pmf: Vec<f64> = weights.iter().map(|x| x / total).collect();
                let head: f64 = pmf[1..].iter().sum();
                pmf[0] = 1.0 - head;
                DiscreteStudentScm::new(
                    support,
                    pmf,
                    links
                        .into_iter()
                        .map(|(a, b)| MasteryLink { a, b })
                        .collect(),
                    OutcomeLink { w0, w, w_d },
                )
                .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn backdoor_identity_on_random_models(scm in arb_scm(), v in 0u8..=1) {
        for j in 0..scm.n_concepts() {
            let direct = scm.interventional_distribution(j, v).unwrap();
            let adjusted = scm.backdoor_adjusted(j, v).unwrap();
            prop_assert!((direct - adjusted).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_clamp_reproduces_observational_draws(scm in arb_scm(), seed in any::<u64>()) {
        let obs = sample_observational(&scm, 50, seed).unwrap();
        let empty = sample_do(&scm, &BTreeMap::new(), 50, seed).unwrap();
        prop_assert_eq!(obs, empty);
    }

    #[test]
    fn marginal_equals_unclamped_rate(scm in arb_scm()) {
        let p = scm.outcome_marginal().unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let empty = scm.interventional_rate(&BTreeMap::new()).unwrap();
        prop_assert!((p - empty).abs() < 1e-12);
    }

    #[test]
    fn clamped_concepts_hold_their_value(scm in arb_scm(), seed in any::<u64>(), v in any::<bool>()) {
        let clamps = BTreeMap::from([(0usize, v)]);
        let draws = sample_do(&scm, &clamps, 30, seed).unwrap();
        prop_assert!(draws.iter().all(|s| s.masteries[0] == v));
    }
}
