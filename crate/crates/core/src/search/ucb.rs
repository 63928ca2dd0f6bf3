use serde::{Deserialize, Serialize};

use super::SearchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbParams {
    pub beta: f64,
    pub gamma: f64,
}

impl UcbParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self, SearchError> {
        if !(beta >= 0.0 && gamma >= 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(SearchError::Params(format!(
                "beta and gamma must be finite and nonnegative, got ({beta}, {gamma})"
            )));
        }
        Ok(Self { beta, gamma })
    }
}

impl Default for UcbParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Mean reward `Q(s, a)`.
    pub q: f64,
    /// Visits of the parent state `N(s)`.
    pub n_state: u64,
    /// Visits of the action `N(s, a)`.
    pub n_action: u64,
}

/// `Q(s,a) + β √(ln N(s) / N(s,a)) + γ ê`.
pub fn ucb_score(stats: NodeStats, params: UcbParams, e_hat: f64) -> Result<f64, SearchError> {
    if stats.n_state < 1 {
        return Err(SearchError::Params("N(s) must be at least 1".into()));
    }
    if stats.n_action < 1 {
        return Err(SearchError::Params("N(s, a) must be at least 1".into()));
    }
    Ok(ucb_score_unchecked(
        stats.q,
        stats.n_state as f64,
        stats.n_action as f64,
        params,
        e_hat,
    ))
}

pub(crate) fn ucb_score_unchecked(
    q: f64,
    n_state: f64,
    n_action: f64,
    params: UcbParams,
    e_hat: f64,
) -> f64 {
    q + params.beta * (n_state.ln() / n_action).sqrt() + params.gamma * e_hat
}

/// `verify + λ ê`.
pub fn shaped_reward(correct: bool, e_hat: f64, lambda: f64) -> Result<f64, SearchError> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(SearchError::Params(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(f64::from(u8::from(correct)) + lambda * e_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let p = UcbParams::new(1.0, 0.5).unwrap();
        let s = NodeStats {
            q: 0.0,
            n_state: 1,
            n_action: 1,
        };
        assert_eq!(
            ucb_score(s, UcbParams::new(7.0, 0.5).unwrap(), 0.0).unwrap(),
            0.0
        );
        let v = ucb_score_unchecked(0.5, std::f64::consts::E.powi(2), 2.0, p, 0.2);
        assert!((v - 1.6).abs() < 1e-12);
        assert!(ucb_score(
            NodeStats {
                q: 0.0,
                n_state: 0,
                n_action: 1
            },
            p,
            0.0
        )
        .is_err());
        assert!(UcbParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn shaped_examples() {
        assert!((shaped_reward(true, 0.2, 0.1).unwrap() - 1.02).abs() < 1e-15);
        assert!((shaped_reward(false, 0.3, 0.3).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(shaped_reward(true, 0.7, 0.0).unwrap(), 1.0);
        assert!(shaped_reward(true, 0.7, -0.1).is_err());
    }
}
