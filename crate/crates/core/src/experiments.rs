//! Replication studies behind the CLI commands and the acceptance suite.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::{confounded_pair_with, logit, null_confounding_pair};
use crate::icp::{
    confounding_bias_experiment, estimate_baseline, estimate_icp, DegenerateRule, IcpError,
};
use crate::rng::{derive_seed, substream};
use crate::scm::{
    nonidentifiability_witness, reduced_form_covariance, DiscreteStudentScm, MasteryLink,
    OutcomeLink, ScmError,
};
use crate::search::{run_bandit, BanditInstance, Policy, SearchError, UcbParams};
use crate::simulator::{
    perturb, ScmBinding, SimError, SimProblem, Simulator, SimulatorFidelity, SyntheticSimulator,
};
use crate::stats::{log_log_slope, mean, sign_test, standard_error, SignTest};
use crate::svar::{identify_chain, ChainFixture, SvarError, SvarProbe};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Icp(#[from] IcpError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Svar(#[from] SvarError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingRow {
    pub label: String,
    pub w_d: f64,
    pub b: f64,
    pub samples: usize,
    pub e_true: f64,
    pub beta_obs: Option<f64>,
    pub se_obs: Option<f64>,
    pub bias_obs: Option<f64>,
    pub e_icp: f64,
    pub se_icp: f64,
    pub bias_icp: f64,
    pub backdoor_residual: f64,
}

impl ConfoundingRow {
    /// `bias / SE` of the observational contrast.
    pub fn obs_z(&self) -> Option<f64> {
        Some(self.bias_obs? / self.se_obs?)
    }

    pub fn icp_z(&self) -> f64 {
        self.bias_icp / self.se_icp
    }
}

/// Strength of mastery confounding in the sweep.
pub const SWEEP_MASTERY_B: f64 = 4.0;

/// Null-confounding control first, then one row per `w_d`.
pub fn confounding_sweep(
    w_ds: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ConfoundingRow>, ExperimentError> {
    let mut cases = vec![(
        "null-confounding".to_string(),
        0.0,
        0.0,
        null_confounding_pair(),
    )];
    for &w_d in w_ds {
        cases.push((
            format!("w_d={w_d}"),
            w_d,
            SWEEP_MASTERY_B,
            confounded_pair_with(w_d, SWEEP_MASTERY_B),
        ));
    }
    cases
        .into_par_iter()
        .enumerate()
        .map(|(i, (label, w_d, b, scm))| {
            let r = confounding_bias_experiment(
                &scm,
                0,
                samples,
                samples,
                derive_seed(seed, "confounding-row", i as u64),
            )?;
            Ok(ConfoundingRow {
                label,
                w_d,
                b,
                samples,
                e_true: r.e_true,
                beta_obs: r.beta_obs,
                se_obs: r.se_obs,
                bias_obs: r.bias_obs,
                e_icp: r.e_icp,
                se_icp: r.se_icp,
                bias_icp: r.bias_icp,
                backdoor_residual: r.backdoor_residual,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub m: usize,
    pub replications: usize,
    pub rmse: f64,
    pub mean_e_hat: f64,
    /// `mean_e_hat − target`.
    pub bias: f64,
    /// Standard error of `mean_e_hat`.
    pub bias_se: f64,
}

/// Seed of replication `rep` at trial count `m`; shared across fidelities so
/// the same replication sees the same draws.
fn replication_seed(seed: u64, m: usize, rep: usize) -> u64 {
    derive_seed(
        derive_seed(seed, "replication-m", m as u64),
        "rep",
        rep as u64,
    )
}

/// `reps` independent ICP estimates of `concept`, each with `n_obs = m`.
pub fn replicate_icp(
    sim: &dyn Simulator,
    problem: &SimProblem,
    concept: &str,
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>, ExperimentError> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = replication_seed(seed, m, r);
            let base = estimate_baseline(sim, problem, m, s)?;
            let e = estimate_icp(
                sim,
                problem,
                concept,
                m,
                base,
                DegenerateRule::PseudoCount,
                s,
            )?;
            Ok(e.e_hat)
        })
        .collect()
}

fn summarize(delta: f64, m: usize, target: f64, e: &[f64]) -> ConvergenceRow {
    let mean_e = mean(e);
    let mse = e.iter().map(|x| (x - target).powi(2)).sum::<f64>() / e.len() as f64;
    ConvergenceRow {
        delta,
        m,
        replications: e.len(),
        rmse: mse.sqrt(),
        mean_e_hat: mean_e,
        bias: mean_e - target,
        bias_se: standard_error(e).unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub target: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln RMSE` on `ln M`; `None` when any RMSE is 0.
    pub slope: Option<f64>,
}

/// RMSE of the ICP estimate against `target` over a grid of `M`.
pub fn icp_convergence(
    sim: &dyn Simulator,
    problem: &SimProblem,
    concept: &str,
    target: f64,
    ms: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ConvergenceStudy, ExperimentError> {
    if ms.is_empty() || reps < 2 {
        return Err(ExperimentError::Input(
            "need at least one M and two replications".into(),
        ));
    }
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        let e = replicate_icp(sim, problem, concept, m, reps, seed)?;
        rows.push(summarize(0.0, m, target, &e));
    }
    let slope = if rows.iter().all(|r| r.rmse > 0.0) && rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
        log_log_slope(&xs, &ys)
    } else {
        None
    };
    Ok(ConvergenceStudy {
        target,
        rows,
        slope,
    })
}

/// ICP replications through `perturb(synthetic, δ)` over a `(δ, M)` grid.
/// Bias is measured against the exact target of the unperturbed model.
pub fn delta_decomposition(
    problem: &SimProblem,
    concept: &str,
    deltas: &[f64],
    ms: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, ExperimentError> {
    if reps < 2 {
        return Err(ExperimentError::Input(
            "need at least two replications".into(),
        ));
    }
    let binding = problem.binding()?;
    let j = binding
        .concept_index(concept)
        .ok_or_else(|| SimError::UnknownConcept(concept.to_string()))?;
    let target = binding.scm.icp_target(j)?;
    let mut rows = Vec::new();
    for &delta in deltas {
        let sim = perturb(SyntheticSimulator, SimulatorFidelity::new(delta)?);
        for &m in ms {
            let e = replicate_icp(&sim, problem, concept, m, reps, seed)?;
            rows.push(summarize(delta, m, target, &e));
        }
    }
    Ok(rows)
}

/// `|bias|` at the largest `M` for each δ, in δ order.
pub fn bias_plateaus(rows: &[ConvergenceRow]) -> Vec<(f64, f64, f64)> {
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    deltas.dedup();
    deltas
        .into_iter()
        .filter_map(|d| {
            rows.iter()
                .filter(|r| r.delta == d)
                .max_by_key(|r| r.m)
                .map(|r| (d, r.bias.abs(), r.bias_se))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretComparison {
    pub instance: String,
    pub horizon: u64,
    pub ucb1: Vec<f64>,
    pub causal: Vec<f64>,
    pub ucb1_mean: f64,
    pub causal_mean: f64,
    /// Wins count seeds where the causal policy has lower regret.
    pub sign: SignTest,
    /// γ = 0 causal runs reproduce UCB1 pull sequences on every seed.
    pub gamma0_identical: bool,
}

fn bandit_seed(seed: u64, s: usize) -> u64 {
    derive_seed(seed, "bandit-seed", s as u64)
}

/// Final regret of UCB1 against Math-Causal-UCB on `n_seeds` paired seeds.
pub fn regret_comparison(
    name: &str,
    instance: &BanditInstance,
    params: UcbParams,
    horizon: u64,
    n_seeds: usize,
    seed: u64,
) -> Result<RegretComparison, ExperimentError> {
    let runs: Vec<(f64, f64, bool)> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            let sd = bandit_seed(seed, s);
            let u = run_bandit(instance, Policy::Ucb1 { beta: params.beta }, horizon, sd)?;
            let c = run_bandit(instance, Policy::MathCausalUcb(params), horizon, sd)?;
            let g0 = run_bandit(
                instance,
                Policy::MathCausalUcb(UcbParams {
                    beta: params.beta,
                    gamma: 0.0,
                }),
                horizon,
                sd,
            )?;
            Ok((u.final_regret(), c.final_regret(), g0.steps == u.steps))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let ucb1: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let causal: Vec<f64> = runs.iter().map(|r| r.1).collect();
    Ok(RegretComparison {
        instance: name.to_string(),
        horizon,
        ucb1_mean: mean(&ucb1),
        causal_mean: mean(&causal),
        sign: sign_test(&causal, &ucb1),
        gamma0_identical: runs.iter().all(|r| r.2),
        ucb1,
        causal,
    })
}

/// Mean `R_T / T` of Math-Causal-UCB over `n_seeds`.
pub fn mean_regret_rate(
    instance: &BanditInstance,
    params: UcbParams,
    horizon: u64,
    n_seeds: usize,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let r: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            run_bandit(
                instance,
                Policy::MathCausalUcb(params),
                horizon,
                bandit_seed(seed, s),
            )
            .map(|t| t.final_regret() / horizon as f64)
        })
        .collect::<Result<_, _>>()?;
    Ok(mean(&r))
}

/// One-concept model whose observational rate is `floor` and whose
/// activated rate is `mean`.
pub fn arm_model(mean: f64, floor: f64) -> Result<DiscreteStudentScm, ExperimentError> {
    let clip = |p: f64| p.clamp(1e-6, 1.0 - 1e-6);
    Ok(DiscreteStudentScm::new(
        vec![0.0],
        vec![1.0],
        vec![MasteryLink { a: -50.0, b: 0.0 }],
        OutcomeLink {
            w0: logit(clip(floor)),
            w: vec![logit(clip(mean)) - logit(clip(floor))],
            w_d: 0.0,
        },
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRegretRow {
    pub delta: f64,
    pub e_hats: Vec<f64>,
    pub mean_regret: f64,
}

/// Math-Causal-UCB regret when each arm's ê is itself measured with `m`
/// trials through a δ-perturbed simulator of that arm.
pub fn regret_vs_delta(
    instance: &BanditInstance,
    params: UcbParams,
    deltas: &[f64],
    m: usize,
    horizon: u64,
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<DeltaRegretRow>, ExperimentError> {
    let floor = instance
        .arms
        .iter()
        .map(|a| a.mean)
        .fold(f64::INFINITY, f64::min);
    let mut problems = Vec::new();
    for arm in &instance.arms {
        let binding = ScmBinding::new(arm_model(arm.mean, floor)?, vec![arm.name.clone()])?;
        problems.push(SimProblem {
            id: arm.name.clone(),
            statement: String::new(),
            gold_answer: String::new(),
            domain: String::new(),
            binding: Some(binding),
        });
    }
    let mut rows = Vec::new();
    for &delta in deltas {
        let sim = perturb(SyntheticSimulator, SimulatorFidelity::new(delta)?);
        let mut e_hats = Vec::new();
        for (k, p) in problems.iter().enumerate() {
            let s = derive_seed(seed, "arm-estimate", k as u64);
            let base = estimate_baseline(&sim, p, m, s)?;
            let e = estimate_icp(&sim, p, &p.id, m, base, DegenerateRule::PseudoCount, s)?;
            e_hats.push(e.e_hat);
        }
        let inst = instance.with_e_hats(&e_hats)?;
        let mean_regret = mean_regret_rate(&inst, params, horizon, n_seeds, seed)? * horizon as f64;
        rows.push(DeltaRegretRow {
            delta,
            e_hats,
            mean_regret,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub n: usize,
    pub trials: usize,
    pub successes: usize,
    /// Runs that used exactly `n − 1` interventions.
    pub exact_interventions: usize,
    pub success_rate: f64,
}

pub const CHAIN_COEFFICIENT: f64 = 0.8;

/// Recovery of randomly relabeled chains; a run succeeds when every edge is
/// oriented correctly with `n − 1` interventions.
pub fn chain_study(
    ns: &[usize],
    n_seeds: usize,
    m_trials: usize,
    seed: u64,
) -> Result<Vec<ChainRow>, ExperimentError> {
    ns.iter()
        .map(|&n| {
            let outcomes: Vec<(bool, bool)> = (0..n_seeds)
                .into_par_iter()
                .map(|s| {
                    let run_seed =
                        derive_seed(derive_seed(seed, "chain-n", n as u64), "run", s as u64);
                    let fixture =
                        ChainFixture::new(&vec![CHAIN_COEFFICIENT; n], 1.0, Some(run_seed))?;
                    let probe = SvarProbe::new(fixture.scm.clone());
                    let id = identify_chain(&probe, n, m_trials, run_seed)?;
                    let exact = id.interventions_used == n - 1;
                    Ok((
                        exact && id.ambiguity.is_none() && id.edges == fixture.edges(),
                        exact,
                    ))
                })
                .collect::<Result<_, ExperimentError>>()?;
            let successes = outcomes.iter().filter(|o| o.0).count();
            Ok(ChainRow {
                n,
                trials: n_seeds,
                successes,
                exact_interventions: outcomes.iter().filter(|o| o.1).count(),
                success_rate: successes as f64 / n_seeds as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub instance: usize,
    pub dim: usize,
    /// Max-norm distance between the two contemporaneous matrices.
    pub b0_difference: f64,
    /// Frobenius distance between the two reduced-form covariances.
    pub residual: f64,
}

/// Largest 2-norm condition number accepted for random `B0`.
pub const WITNESS_MAX_CONDITION: f64 = 50.0;

/// Random well-conditioned `B0` of size `dim` with diagonal noise.
pub fn random_structural_pair(dim: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = substream(seed, "random-structure", 0);
    loop {
        let mut b0 = DMatrix::<f64>::identity(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    let z: f64 = rng.sample(StandardNormal);
                    b0[(i, j)] = 0.4 * z;
                }
            }
        }
        let cov = DMatrix::from_diagonal(&DVector::from_fn(dim, |_, _| rng.random_range(0.5..2.0)));
        let sv = b0.clone().singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo > 0.0 && hi / lo < WITNESS_MAX_CONDITION {
            return (b0, cov);
        }
    }
}

/// Observationally equivalent structural pairs on random instances with
/// dimensions cycling through 2 to 6.
pub fn witness_study(instances: usize, seed: u64) -> Result<Vec<WitnessRow>, ExperimentError> {
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let dim = 2 + i % 5;
            let s = derive_seed(seed, "witness-instance", i as u64);
            let (b0, cov) = random_structural_pair(dim, s);
            let (b0_alt, cov_alt) = nonidentifiability_witness(&b0, &cov, s)?;
            let a = reduced_form_covariance(&b0, &cov)?;
            let b = reduced_form_covariance(&b0_alt, &cov_alt)?;
            Ok(WitnessRow {
                instance: i,
                dim,
                b0_difference: (&b0 - &b0_alt).amax(),
                residual: (a - b).norm(),
            })
        })
        .collect()
}
