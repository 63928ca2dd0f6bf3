//! Causal UCB scoring, a bandit regret harness and tree search over
//! concept-activation sets.

mod bandit;
mod mcts;
mod ucb;

pub use bandit::{run_bandit, Arm, BanditInstance, BanditStep, Policy, RegretTrace};
pub use mcts::{run_mcts, Action, MctsConfig, MctsOutcome, MctsStep, RewardMode, SearchNode, STOP};
pub use ucb::{shaped_reward, ucb_score, NodeStats, UcbParams};

use thiserror::Error;

use crate::simulator::SimError;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
