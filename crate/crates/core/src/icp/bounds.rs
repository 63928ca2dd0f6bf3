use super::IcpError;

/// Hoeffding tail `2 exp(-2 M ε²)` for the deviation of an `M`-trial mean.
pub fn hoeffding_tail(m_trials: usize, epsilon: f64) -> Result<f64, IcpError> {
    if m_trials == 0 {
        return Err(IcpError::ZeroCount { what: "m_trials" });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(IcpError::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(2.0 * (-2.0 * m_trials as f64 * epsilon * epsilon).exp())
}

/// Trials needed so that `K` effects are all within `ε` with probability `1 − δ`:
/// `ceil((2 / ε²) ln(2K / δ))`.
pub fn required_samples(k_concepts: usize, epsilon: f64, delta: f64) -> Result<u64, IcpError> {
    if k_concepts == 0 {
        return Err(IcpError::ZeroCount { what: "k_concepts" });
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(IcpError::Domain(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(IcpError::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let raw = 2.0 / (epsilon * epsilon) * (2.0 * k_concepts as f64 / delta).ln();
    Ok(raw.ceil() as u64)
}
