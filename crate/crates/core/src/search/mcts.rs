use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ucb::{shaped_reward, ucb_score_unchecked, UcbParams};
use super::SearchError;
use crate::icp::CausalGraph;
use crate::rng::derive_seed;
use crate::simulator::{SimProblem, Simulator, TrialOutcome};

pub const STOP: &str = "STOP";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardMode {
    #[default]
    Binary,
    Shaped {
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub budget: usize,
    pub params: UcbParams,
    pub reward: RewardMode,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            budget: 60,
            params: UcbParams::default(),
            reward: RewardMode::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Add(String),
    Stop,
}

impl Action {
    fn label(&self) -> &str {
        match self {
            Action::Add(c) => c,
            Action::Stop => STOP,
        }
    }
}

/// One node of the activation-set tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub activated: Vec<String>,
    pub parent: Option<usize>,
    pub action: Option<Action>,
    /// Effect estimate attached to `action` (0 for STOP).
    pub action_e_hat: f64,
    pub children: Vec<usize>,
    pub visits: u64,
    pub value_sum: f64,
    #[serde(skip)]
    untried: Vec<(Action, f64)>,
    #[serde(skip)]
    last_trial: Option<TrialOutcome>,
}

impl SearchNode {
    pub fn q(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }

    pub fn is_stop(&self) -> bool {
        self.action == Some(Action::Stop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsStep {
    pub iteration: usize,
    /// Actions from the root to the rolled-out node.
    pub path: Vec<String>,
    pub reward: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsOutcome {
    pub solved: bool,
    /// First correct trial, or the last trial of the best-Q node.
    pub trial: Option<TrialOutcome>,
    /// Concepts activated for `trial`.
    pub activated: Vec<String>,
    pub trace: Vec<MctsStep>,
    pub nodes: Vec<SearchNode>,
}

impl MctsOutcome {
    fn noop() -> Self {
        Self {
            solved: false,
            trial: None,
            activated: vec![],
            trace: vec![],
            nodes: vec![],
        }
    }

    /// Rollouts performed, one per iteration.
    pub fn rollouts(&self) -> usize {
        self.trace.len()
    }

    /// `N(s) = 1 + Σ_a N(s, a)` at every node with children.
    pub fn visit_counts_consistent(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.children.is_empty()
                || n.visits
                    == 1 + n
                        .children
                        .iter()
                        .map(|&c| self.nodes[c].visits)
                        .sum::<u64>()
        })
    }

    /// Trace as JSON lines `{iteration, path, reward, correct}`.
    pub fn write_trace_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for step in &self.trace {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn rollout_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, "mcts-rollout", iteration as u64)
}

/// Searches subsets of the activation set. Every iteration descends by
/// unvisited-first then UCB, expands one child, runs one trial, and
/// backpropagates; the search stops at the first correct trial.
pub fn run_mcts(
    problem: &SimProblem,
    sim: &dyn Simulator,
    graph: &CausalGraph,
    config: MctsConfig,
    seed: u64,
) -> Result<MctsOutcome, SearchError> {
    if config.budget == 0 {
        return Err(SearchError::Params("budget must be at least 1".into()));
    }
    let candidates: Vec<(String, f64)> = graph
        .positive_edges()
        .into_iter()
        .map(|e| (e.concept.clone(), e.e_hat))
        .collect();
    if candidates.is_empty() {
        return Ok(MctsOutcome::noop());
    }
    let actions_for = |activated: &[String]| -> Vec<(Action, f64)> {
        let mut out: Vec<(Action, f64)> = candidates
            .iter()
            .filter(|(c, _)| !activated.contains(c))
            .map(|(c, e)| (Action::Add(c.clone()), *e))
            .collect();
        let stop_at = out.iter().position(|(_, e)| *e < 0.0).unwrap_or(out.len());
        out.insert(stop_at, (Action::Stop, 0.0));
        out
    };
    let mut nodes = vec![SearchNode {
        activated: vec![],
        parent: None,
        action: None,
        action_e_hat: 0.0,
        children: vec![],
        visits: 1,
        value_sum: 0.0,
        untried: actions_for(&[]),
        last_trial: None,
    }];
    let mut trace = Vec::with_capacity(config.budget);

    for iteration in 0..config.budget {
        let mut current = 0;
        loop {
            if nodes[current].is_stop() {
                break;
            }
            if !nodes[current].untried.is_empty() {
                let (action, e_hat) = nodes[current].untried.remove(0);
                let mut activated = nodes[current].activated.clone();
                let untried = match &action {
                    Action::Add(c) => {
                        activated.push(c.clone());
                        actions_for(&activated)
                    }
                    Action::Stop => vec![],
                };
                nodes.push(SearchNode {
                    activated,
                    parent: Some(current),
                    action: Some(action),
                    action_e_hat: e_hat,
                    children: vec![],
                    visits: 0,
                    value_sum: 0.0,
                    untried,
                    last_trial: None,
                });
                let child = nodes.len() - 1;
                nodes[current].children.push(child);
                current = child;
                break;
            }
            let parent_visits = nodes[current].visits as f64;
            let mut best = nodes[current].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &c in &nodes[current].children {
                let n = &nodes[c];
                let score = ucb_score_unchecked(
                    n.q(),
                    parent_visits,
                    n.visits as f64,
                    config.params,
                    n.action_e_hat,
                );
                if score > best_score {
                    best_score = score;
                    best = c;
                }
            }
            current = best;
        }

        let node = &nodes[current];
        let set = if node.is_stop() {
            nodes[node.parent.expect("stop has a parent")]
                .activated
                .clone()
        } else {
            node.activated.clone()
        };
        let s = rollout_seed(seed, iteration);
        let trial = if set.is_empty() {
            sim.baseline_trial(problem, s)?
        } else {
            sim.do_trial(problem, &set, s)?
        };
        let reward = match config.reward {
            RewardMode::Binary => f64::from(u8::from(trial.correct)),
            RewardMode::Shaped { lambda } => {
                shaped_reward(trial.correct, node.action_e_hat, lambda)?
            }
        };
        let mut path = Vec::new();
        let mut walk = Some(current);
        while let Some(i) = walk {
            if let Some(a) = &nodes[i].action {
                path.push(a.label().to_string());
            }
            nodes[i].visits += 1;
            nodes[i].value_sum += reward;
            walk = nodes[i].parent;
        }
        path.reverse();
        let correct = trial.correct;
        nodes[current].last_trial = Some(trial.clone());
        trace.push(MctsStep {
            iteration: iteration + 1,
            path,
            reward,
            correct,
        });
        if correct {
            return Ok(MctsOutcome {
                solved: true,
                trial: Some(trial),
                activated: set,
                trace,
                nodes,
            });
        }
    }

    let best = (1..nodes.len())
        .filter(|&i| nodes[i].last_trial.is_some())
        .fold(None::<usize>, |acc, i| match acc {
            Some(b) if nodes[b].q() >= nodes[i].q() => Some(b),
            _ => Some(i),
        });
    let (trial, activated) = match best {
        Some(i) => {
            let n = &nodes[i];
            let set = if n.is_stop() {
                nodes[n.parent.expect("stop has a parent")]
                    .activated
                    .clone()
            } else {
                n.activated.clone()
            };
            (n.last_trial.clone(), set)
        }
        None => (None, vec![]),
    };
    Ok(MctsOutcome {
        solved: false,
        trial,
        activated,
        trace,
        nodes,
    })
}
