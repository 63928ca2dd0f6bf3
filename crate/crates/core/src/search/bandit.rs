use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ucb::{ucb_score_unchecked, UcbParams};
use super::SearchError;
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub mean: f64,
    /// Effect estimate handed to the causal policy.
    pub e_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditInstance {
    pub arms: Vec<Arm>,
}

impl BanditInstance {
    pub fn new(arms: Vec<Arm>) -> Result<Self, SearchError> {
        if arms.is_empty() {
            return Err(SearchError::Params("bandit needs at least one arm".into()));
        }
        if arms
            .iter()
            .any(|a| !(0.0..=1.0).contains(&a.mean) || !a.e_hat.is_finite())
        {
            return Err(SearchError::Params("arm means must lie in [0, 1]".into()));
        }
        Ok(Self { arms })
    }

    /// Bernoulli arms with the given means and effect estimates.
    pub fn from_means(means: &[f64], e_hats: &[f64]) -> Result<Self, SearchError> {
        if means.len() != e_hats.len() {
            return Err(SearchError::Params("one effect estimate per arm".into()));
        }
        Self::new(
            means
                .iter()
                .zip(e_hats)
                .enumerate()
                .map(|(i, (&mean, &e_hat))| Arm {
                    name: format!("arm{i}"),
                    mean,
                    e_hat,
                })
                .collect(),
        )
    }

    /// Means 0.9 and 0.1; oracle effects (0.8, 0).
    pub fn two_arm() -> Self {
        Self::from_means(&[0.9, 0.1], &[0.8, 0.0]).expect("valid instance")
    }

    /// Ten evenly spaced means from 0.1 to 0.82; oracle effect is the gap to the worst arm.
    pub fn ten_arm() -> Self {
        let means: Vec<f64> = (0..10).map(|k| 0.1 + 0.08 * k as f64).collect();
        let e: Vec<f64> = means.iter().map(|m| m - 0.1).collect();
        Self::from_means(&means, &e).expect("valid instance")
    }

    pub fn best_mean(&self) -> f64 {
        self.arms
            .iter()
            .map(|a| a.mean)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn with_e_hats(&self, e_hats: &[f64]) -> Result<Self, SearchError> {
        let means: Vec<f64> = self.arms.iter().map(|a| a.mean).collect();
        Self::from_means(&means, e_hats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Ucb1 { beta: f64 },
    MathCausalUcb(UcbParams),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Ucb1 { .. } => "ucb1",
            Policy::MathCausalUcb(_) => "math-causal-ucb",
        }
    }

    fn params(&self) -> UcbParams {
        match *self {
            Policy::Ucb1 { beta } => UcbParams { beta, gamma: 0.0 },
            Policy::MathCausalUcb(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditStep {
    pub step: u64,
    pub arm: usize,
    pub reward: f64,
    pub instantaneous_regret: f64,
    pub cumulative_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub steps: Vec<BanditStep>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_regret)
    }

    pub fn arms(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.arm).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SearchError> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reward of pull `k` of arm `arm`; identical across policies for a seed.
fn pull(instance: &BanditInstance, arm: usize, k: u64, seed: u64) -> f64 {
    let mut rng = substream(derive_seed(seed, "bandit-arm", arm as u64), "pull", k);
    let u: f64 = rng.random();
    f64::from(u8::from(u < instance.arms[arm].mean))
}

/// Pulls every arm once in index order, then the highest-scoring arm
/// (lowest index on ties). Regret is pseudo-regret against the best mean.
pub fn run_bandit(
    instance: &BanditInstance,
    policy: Policy,
    horizon: u64,
    seed: u64,
) -> Result<RegretTrace, SearchError> {
    let k = instance.arms.len();
    if horizon < k as u64 {
        return Err(SearchError::Params(format!(
            "horizon {horizon} shorter than the {k} arms"
        )));
    }
    let params = policy.params();
    let best = instance.best_mean();
    let mut counts = vec![0u64; k];
    let mut sums = vec![0.0f64; k];
    let mut cumulative = 0.0;
    let mut steps = Vec::with_capacity(horizon as usize);
    for t in 0..horizon {
        let arm = if (t as usize) < k {
            t as usize
        } else {
            let n_state = t as f64;
            let mut best_arm = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (a, arm) in instance.arms.iter().enumerate() {
                let score = ucb_score_unchecked(
                    sums[a] / counts[a] as f64,
                    n_state,
                    counts[a] as f64,
                    params,
                    arm.e_hat,
                );
                if score > best_score {
                    best_score = score;
                    best_arm = a;
                }
            }
            best_arm
        };
        let reward = pull(instance, arm, counts[arm], seed);
        counts[arm] += 1;
        sums[arm] += reward;
        let regret = best - instance.arms[arm].mean;
        cumulative += regret;
        steps.push(BanditStep {
            step: t + 1,
            arm,
            reward,
            instantaneous_regret: regret,
            cumulative_regret: cumulative,
        });
    }
    Ok(RegretTrace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arm_has_no_regret() {
        let inst = BanditInstance::from_means(&[0.3], &[0.0]).unwrap();
        let t = run_bandit(&inst, Policy::Ucb1 { beta: 1.0 }, 100, 1).unwrap();
        assert_eq!(t.final_regret(), 0.0);
    }

    #[test]
    fn initial_round_robin() {
        let t = run_bandit(
            &BanditInstance::ten_arm(),
            Policy::Ucb1 { beta: 1.0 },
            10,
            4,
        )
        .unwrap();
        assert_eq!(t.arms(), (0..10).collect::<Vec<_>>());
        assert!(run_bandit(&BanditInstance::ten_arm(), Policy::Ucb1 { beta: 1.0 }, 9, 4).is_err());
    }

    #[test]
    fn csv_columns() {
        let inst = BanditInstance::two_arm();
        let t = run_bandit(&inst, Policy::Ucb1 { beta: 1.0 }, 3, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,arm,reward,instantaneous_regret,cumulative_regret\n"));
    }
}
