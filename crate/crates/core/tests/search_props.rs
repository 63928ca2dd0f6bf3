use cika::fixtures::pair_threshold_problem;
use cika::icp::{
    build_causal_graph, select_activation_set, BaselineStats, CausalGraph, DegenerateRule,
    GraphConfig, IcpEstimate,
};
use cika::search::{
    run_bandit, run_mcts, ucb_score, Action, BanditInstance, MctsConfig, NodeStats, Policy,
    UcbParams,
};
use cika::simulator::SyntheticSimulator;
use proptest::prelude::*;

fn estimate(concept: &str, successes: usize, m: usize, baseline: BaselineStats) -> IcpEstimate {
    IcpEstimate::from_counts(concept, successes, m, baseline, DegenerateRule::PseudoCount).unwrap()
}

fn pair_graph() -> CausalGraph {
    let base = BaselineStats::from_counts(0, 20).unwrap();
    let table = vec![
        estimate("a", 8, 20, base),
        estimate("b", 6, 20, base),
        estimate("c", 7, 20, base),
    ];
    build_causal_graph(&table, GraphConfig::default()).unwrap()
}

fn arb_table() -> impl Strategy<Value = Vec<IcpEstimate>> {
    (0usize..=20, prop::collection::vec(0usize..=20, 1..8)).prop_map(|(base, succ)| {
        let baseline = BaselineStats::from_counts(base, 20).unwrap();
        succ.iter()
            .enumerate()
            .map(|(i, &s)| estimate(&format!("c{i}"), s, 20, baseline))
            .collect()
    })
}

#[test]
fn pair_threshold_is_found_by_search() {
    let problem = pair_threshold_problem();
    let graph = pair_graph();
    assert_eq!(select_activation_set(&graph).len(), 3);
    let solved = (0..100u64)
        .filter(|&s| {
            let out = run_mcts(
                &problem,
                &SyntheticSimulator,
                &graph,
                MctsConfig::default(),
                s,
            )
            .unwrap();
            assert!(out.visit_counts_consistent());
            if out.solved {
                let mut act = out.activated.clone();
                act.sort();
                act.dedup();
                assert!(act.contains(&"a".to_string()) && act.contains(&"b".to_string()));
            }
            out.solved
        })
        .count();
    assert!(solved >= 90, "solved {solved}/100");
}

#[test]
fn first_expansion_follows_effect_order() {
    let problem = pair_threshold_problem();
    let graph = pair_graph();
    let out = run_mcts(
        &problem,
        &SyntheticSimulator,
        &graph,
        MctsConfig::default(),
        5,
    )
    .unwrap();
    let firsts: Vec<&str> = out
        .trace
        .iter()
        .take(3)
        .map(|s| s.path[0].as_str())
        .collect();
    assert_eq!(firsts, ["a", "c", "b"]);
    let root_children: Vec<Option<Action>> = out.nodes[0]
        .children
        .iter()
        .map(|&c| out.nodes[c].action.clone())
        .collect();
    assert_eq!(root_children[0], Some(Action::Add("a".into())));
}

#[test]
fn empty_activation_set_skips_search() {
    let base = BaselineStats::from_counts(10, 20).unwrap();
    let graph = build_causal_graph(&[estimate("a", 10, 20, base)], GraphConfig::default()).unwrap();
    let out = run_mcts(
        &pair_threshold_problem(),
        &SyntheticSimulator,
        &graph,
        MctsConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(out.rollouts(), 0);
    assert!(!out.solved);
}

#[test]
fn unsolvable_search_spends_whole_budget() {
    let base = BaselineStats::from_counts(0, 20).unwrap();
    let graph = build_causal_graph(&[estimate("c", 10, 20, base)], GraphConfig::default()).unwrap();
    let config = MctsConfig {
        budget: 25,
        ..MctsConfig::default()
    };
    let out = run_mcts(
        &pair_threshold_problem(),
        &SyntheticSimulator,
        &graph,
        config,
        2,
    )
    .unwrap();
    assert_eq!(out.rollouts(), 25);
    assert!(!out.solved);
    assert!(out.visit_counts_consistent());
}

proptest! {
    #[test]
    fn gamma_zero_matches_ucb1(
        means in prop::collection::vec(0.05f64..0.95, 2..6),
        e_seed in prop::collection::vec(-1.0f64..1.0, 6),
        beta in 0.1f64..2.0,
        seed in any::<u64>(),
    ) {
        let e: Vec<f64> = e_seed[..means.len()].to_vec();
        let inst = BanditInstance::from_means(&means, &e).unwrap();
        let a = run_bandit(&inst, Policy::Ucb1 { beta }, 300, seed).unwrap();
        let b = run_bandit(&inst, Policy::MathCausalUcb(UcbParams::new(beta, 0.0).unwrap()), 300, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn uniform_effect_shift_keeps_argmax(
        arms in prop::collection::vec((0.0f64..1.0, 1u64..50, -1.0f64..1.0), 2..8),
        n_state in 50u64..500,
        beta in 0.0f64..2.0,
        gamma in 0.0f64..2.0,
        shift in -1.0f64..1.0,
    ) {
        let params = UcbParams::new(beta, gamma).unwrap();
        let scores = |c: f64| -> Vec<f64> {
            arms.iter()
                .map(|&(q, n, e)| ucb_score(NodeStats { q, n_state, n_action: n }, params, e + c).unwrap())
                .collect()
        };
        let base = scores(0.0);
        let moved = scores(shift);
        let best = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let runner_up = base.iter().cloned().filter(|s| *s < best).fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(best - runner_up > 1e-9);
        let arg = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(arg(&base), arg(&moved));
        for (x, y) in base.iter().zip(&moved) {
            prop_assert!((y - x - gamma * shift).abs() < 1e-9);
        }
    }

    #[test]
    fn activation_set_ignores_table_order(table in arb_table(), rot in 0usize..8) {
        let g1 = build_causal_graph(&table, GraphConfig::default()).unwrap();
        let mut shuffled = table.clone();
        shuffled.reverse();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        let g2 = build_causal_graph(&shuffled, GraphConfig::default()).unwrap();
        prop_assert_eq!(select_activation_set(&g1), select_activation_set(&g2));
    }

    #[test]
    fn activation_set_is_sorted_and_significant(table in arb_table()) {
        let g = build_causal_graph(&table, GraphConfig::default()).unwrap();
        let set = select_activation_set(&g);
        let effects: Vec<f64> = set.iter().map(|c| g.e_hat(c).unwrap()).collect();
        prop_assert!(effects.windows(2).all(|w| w[0] >= w[1]));
        let z = GraphConfig::default().z_crit;
        for c in &set {
            let e = table.iter().find(|e| &e.concept == c).unwrap();
            prop_assert!(e.e_hat > z * e.sigma_hat);
        }
    }

    #[test]
    fn visit_counts_stay_consistent(seed in any::<u64>(), budget in 1usize..40) {
        let config = MctsConfig { budget, ..MctsConfig::default() };
        let out = run_mcts(&pair_threshold_problem(), &SyntheticSimulator, &pair_graph(), config, seed).unwrap();
        prop_assert!(out.visit_counts_consistent());
        prop_assert!(out.rollouts() <= budget);
        prop_assert_eq!(out.nodes[0].visits as usize, 1 + out.rollouts());
    }
}
