use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::IcpError;
use crate::rng::derive_seed;
use crate::scm::{sample_do, sample_observational, DiscreteStudentScm};

/// Observational versus interventional estimates of one concept's effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingReport {
    pub concept: usize,
    pub n_obs: usize,
    pub m_trials: usize,
    /// `E[p | m=1] − E[p | m=0]` from observational samples; `None` when a cell is empty.
    pub beta_obs: Option<f64>,
    pub se_obs: Option<f64>,
    /// `P(p | do(m=1)) − P(p | do(m=0))` from do-samples.
    pub e_icp: f64,
    pub se_icp: f64,
    /// Exact effect by enumeration.
    pub e_true: f64,
    pub bias_obs: Option<f64>,
    pub bias_icp: f64,
    /// Exact observational contrast, when both cells have mass.
    pub beta_obs_exact: Option<f64>,
    /// Largest gap between the do-side and adjustment-side enumerations.
    pub backdoor_residual: f64,
}

fn rate(successes: usize, n: usize) -> f64 {
    successes as f64 / n as f64
}

pub fn confounding_bias_experiment(
    scm: &DiscreteStudentScm,
    concept: usize,
    n_obs: usize,
    m_trials: usize,
    seed: u64,
) -> Result<ConfoundingReport, IcpError> {
    if n_obs == 0 {
        return Err(IcpError::ZeroCount { what: "n_obs" });
    }
    if m_trials == 0 {
        return Err(IcpError::ZeroCount { what: "m_trials" });
    }
    let e_true = scm.true_effect(concept)?;
    let mut backdoor_residual: f64 = 0.0;
    for v in [0u8, 1] {
        if let Ok(adjusted) = scm.backdoor_adjusted(concept, v) {
            let direct = scm.interventional_distribution(concept, v)?;
            backdoor_residual = backdoor_residual.max((direct - adjusted).abs());
        }
    }

    let obs = sample_observational(scm, n_obs, derive_seed(seed, "confounding-obs", 0))?;
    let (mut n1, mut s1, mut n0, mut s0) = (0usize, 0usize, 0usize, 0usize);
    for sample in &obs {
        if sample.masteries[concept] {
            n1 += 1;
            s1 += usize::from(sample.outcome);
        } else {
            n0 += 1;
            s0 += usize::from(sample.outcome);
        }
    }
    let (beta_obs, se_obs) = if n1 > 0 && n0 > 0 {
        let (p1, p0) = (rate(s1, n1), rate(s0, n0));
        (
            Some(p1 - p0),
            Some((p1 * (1.0 - p1) / n1 as f64 + p0 * (1.0 - p0) / n0 as f64).sqrt()),
        )
    } else {
        (None, None)
    };

    let arm = |value: bool| -> Result<f64, IcpError> {
        let clamps = BTreeMap::from([(concept, value)]);
        let draws = sample_do(
            scm,
            &clamps,
            m_trials,
            derive_seed(seed, "confounding-do", u64::from(value)),
        )?;
        Ok(rate(draws.iter().filter(|s| s.outcome).count(), m_trials))
    };
    let (q1, q0) = (arm(true)?, arm(false)?);
    let m = m_trials as f64;
    let e_icp = q1 - q0;
    let se_icp = (q1 * (1.0 - q1) / m + q0 * (1.0 - q0) / m).sqrt();

    Ok(ConfoundingReport {
        concept,
        n_obs,
        m_trials,
        beta_obs,
        se_obs,
        e_icp,
        se_icp,
        e_true,
        bias_obs: beta_obs.map(|b| b - e_true),
        bias_icp: e_icp - e_true,
        beta_obs_exact: scm.observational_contrast(concept).ok(),
        backdoor_residual,
    })
}
