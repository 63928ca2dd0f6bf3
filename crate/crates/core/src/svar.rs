//! Effect estimation on linear SVAR models from simulated interventions.
//!
//! The last coordinate is the correctness signal `p`. Contemporaneous effects
//! contrast `do(c=1)` against `do(c=0)` on independent noise; lagged effects
//! and chain orientation contrast a one-shot clamp against the natural path
//! on the same noise.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, substream};
use crate::scm::{simulate_svar, Clamp, LinearSvarScm, ScmError};
use crate::stats::{mean, standard_error};

#[derive(Debug, Error)]
pub enum SvarError {
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("horizon {requested} exceeds the simulated limit {limit}")]
    Horizon { requested: usize, limit: usize },
    #[error("{0}")]
    Chain(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Intervention access to a [`LinearSvarScm`].
#[derive(Debug, Clone)]
pub struct SvarProbe {
    pub scm: LinearSvarScm,
    /// Steps simulated before the intervention time.
    pub burn_in: usize,
    /// Longest lag horizon that may be requested.
    pub horizon_limit: usize,
}

impl SvarProbe {
    pub fn new(scm: LinearSvarScm) -> Self {
        let burn_in = 10 * scm.lag_order();
        Self {
            scm,
            burn_in,
            horizon_limit: 64,
        }
    }

    fn clamp_time(&self) -> usize {
        self.burn_in.max(self.scm.lag_order())
    }

    /// Length so that `t0 + extra` is the last step.
    fn horizon_for(&self, extra: usize) -> usize {
        self.clamp_time() + extra + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvarEstimate {
    /// Effect on `p` of each concept, `do(1)` minus `do(0)` at the same step.
    pub contemporaneous: Vec<f64>,
    pub contemporaneous_se: Vec<f64>,
    /// `[concept][h − 1]` shift of `p` at `t + h` after a clamp at `t`.
    pub lagged: Vec<Vec<f64>>,
    pub lagged_se: Vec<Vec<f64>>,
}

fn summarize(values: &[f64]) -> (f64, f64) {
    (mean(values), standard_error(values).unwrap_or(0.0))
}

/// Contemporaneous effect of each concept on `p`, with `m_trials` draws per arm.
pub fn estimate_contemporaneous(
    probe: &SvarProbe,
    m_trials: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), SvarError> {
    if m_trials < 2 {
        return Err(SvarError::TooFewTrials(m_trials));
    }
    let scm = &probe.scm;
    let p = scm.outcome_index();
    let t0 = probe.clamp_time();
    let horizon = probe.horizon_for(0);
    let mut effects = Vec::with_capacity(scm.n_concepts());
    let mut ses = Vec::with_capacity(scm.n_concepts());
    for i in 0..scm.n_concepts() {
        let arm = |value: f64, tag: &str| -> Result<Vec<f64>, SvarError> {
            (0..m_trials as u64)
                .into_par_iter()
                .map(|r| {
                    let s = derive_seed(derive_seed(seed, tag, i as u64), "trial", r);
                    let clamp = [Clamp {
                        time: t0,
                        coordinate: i,
                        value,
                    }];
                    Ok(simulate_svar(scm, horizon, &clamp, s)?.steps[t0][p])
                })
                .collect()
        };
        let (m1, se1) = summarize(&arm(1.0, "contemporaneous-1")?);
        let (m0, se0) = summarize(&arm(0.0, "contemporaneous-0")?);
        effects.push(m1 - m0);
        ses.push((se1 * se1 + se0 * se0).sqrt());
    }
    Ok((effects, ses))
}

/// Per-trial coupled differences `clamped − natural` for every coordinate at
/// steps `t0..=t0 + extra` after clamping `coordinate` to 1 at `t0`.
fn coupled_differences(
    probe: &SvarProbe,
    coordinate: usize,
    extra: usize,
    m_trials: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<Vec<Vec<f64>>>, SvarError> {
    let scm = &probe.scm;
    let t0 = probe.clamp_time();
    let horizon = probe.horizon_for(extra);
    (0..m_trials as u64)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(derive_seed(seed, tag, coordinate as u64), "trial", r);
            let natural = simulate_svar(scm, horizon, &[], s)?;
            let clamp = [Clamp {
                time: t0,
                coordinate,
                value: 1.0,
            }];
            let clamped = simulate_svar(scm, horizon, &clamp, s)?;
            Ok((0..=extra)
                .map(|h| {
                    let a = &clamped.steps[t0 + h];
                    let b = &natural.steps[t0 + h];
                    (a - b).iter().copied().collect()
                })
                .collect())
        })
        .collect()
}

/// Per-concept shifts and standard errors, indexed `[concept][horizon − 1]`.
pub type LaggedEstimate = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Shift of `p` at horizons `1..=horizons` after a one-shot clamp.
pub fn estimate_lagged(
    probe: &SvarProbe,
    horizons: usize,
    m_trials: usize,
    seed: u64,
) -> Result<LaggedEstimate, SvarError> {
    if horizons > probe.horizon_limit {
        return Err(SvarError::Horizon {
            requested: horizons,
            limit: probe.horizon_limit,
        });
    }
    if m_trials < 2 {
        return Err(SvarError::TooFewTrials(m_trials));
    }
    let p = probe.scm.outcome_index();
    let mut effects = Vec::new();
    let mut ses = Vec::new();
    for i in 0..probe.scm.n_concepts() {
        let diffs = coupled_differences(probe, i, horizons, m_trials, seed, "lagged")?;
        let mut row = Vec::with_capacity(horizons);
        let mut row_se = Vec::with_capacity(horizons);
        for h in 1..=horizons {
            let values: Vec<f64> = diffs.iter().map(|d| d[h][p]).collect();
            let (m, se) = summarize(&values);
            row.push(m);
            row_se.push(se);
        }
        effects.push(row);
        ses.push(row_se);
    }
    Ok((effects, ses))
}

pub fn estimate_svar(
    probe: &SvarProbe,
    horizons: usize,
    m_trials: usize,
    seed: u64,
) -> Result<SvarEstimate, SvarError> {
    let (contemporaneous, contemporaneous_se) = estimate_contemporaneous(probe, m_trials, seed)?;
    let (lagged, lagged_se) = estimate_lagged(probe, horizons, m_trials, seed)?;
    Ok(SvarEstimate {
        contemporaneous,
        contemporaneous_se,
        lagged,
        lagged_se,
    })
}

impl SvarEstimate {
    /// One row per horizon (0 is contemporaneous), one column per concept.
    pub fn write_csv<W: Write>(&self, out: W, concepts: &[String]) -> Result<(), SvarError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["horizon".to_string()];
        header.extend(concepts.iter().cloned());
        w.write_record(&header)?;
        let mut row = vec!["0".to_string()];
        row.extend(self.contemporaneous.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
        let horizons = self.lagged.first().map_or(0, Vec::len);
        for h in 0..horizons {
            let mut row = vec![(h + 1).to_string()];
            row.extend(self.lagged.iter().map(|r| r[h].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A chain `c_1 → … → c_n → p` whose concept coordinates may be relabeled.
#[derive(Debug, Clone)]
pub struct ChainFixture {
    pub scm: LinearSvarScm,
    /// `order[k]` is the coordinate at chain position `k`.
    pub order: Vec<usize>,
}

impl ChainFixture {
    /// `coefficients[k]` weights the edge out of chain position `k` (the last
    /// one into `p`). With `shuffle_seed`, concept labels are permuted.
    pub fn new(
        coefficients: &[f64],
        noise_var: f64,
        shuffle_seed: Option<u64>,
    ) -> Result<Self, SvarError> {
        let n = coefficients.len();
        if n == 0 {
            return Err(SvarError::Chain("chain needs at least one concept".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(s) = shuffle_seed {
            order.shuffle(&mut substream(s, "chain-labels", 0));
        }
        let dim = n + 1;
        let mut b0 = DMatrix::identity(dim, dim);
        for k in 0..n {
            let child = if k + 1 < n { order[k + 1] } else { n };
            b0[(child, order[k])] = -coefficients[k];
        }
        let scm = LinearSvarScm::new(b0, vec![], nalgebra::DVector::from_element(dim, noise_var))?;
        Ok(Self { scm, order })
    }

    /// True edges `(from, to)` in chain order, ending with the edge into `p`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.order.len();
        let mut path = self.order.clone();
        path.push(n);
        path.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainIdentification {
    /// Oriented edges `(from, to)`; empty when ambiguous.
    pub edges: Vec<(usize, usize)>,
    pub interventions_used: usize,
    /// Coordinates shifted by each intervention, keyed by intervened coordinate.
    pub shifted: Vec<(usize, Vec<usize>)>,
    pub ambiguity: Option<String>,
}

const SHIFT_FLOOR: f64 = 1e-9;

/// Orients a chain over `n` concepts plus `p` by clamping concepts `0..n−1`
/// one at a time. A coordinate counts as shifted when its mean coupled
/// difference exceeds three standard errors.
pub fn identify_chain(
    probe: &SvarProbe,
    n: usize,
    m_trials: usize,
    seed: u64,
) -> Result<ChainIdentification, SvarError> {
    let scm = &probe.scm;
    if n != scm.n_concepts() {
        return Err(SvarError::Chain(format!(
            "model has {} concepts, expected {n}",
            scm.n_concepts()
        )));
    }
    if m_trials < 2 {
        return Err(SvarError::TooFewTrials(m_trials));
    }
    let dim = scm.dim();
    let p = scm.outcome_index();
    let intervened: Vec<usize> = (0..n.saturating_sub(1)).collect();
    let mut shifted = Vec::new();
    for &x in &intervened {
        let diffs = coupled_differences(probe, x, 0, m_trials, seed, "chain")?;
        let set: Vec<usize> = (0..dim)
            .filter(|&v| v != x)
            .filter(|&v| {
                let values: Vec<f64> = diffs.iter().map(|d| d[0][v]).collect();
                let (m, se) = summarize(&values);
                m.abs() > 3.0 * se && m.abs() > SHIFT_FLOOR
            })
            .collect();
        shifted.push((x, set));
    }
    let ambiguous = |reason: String, shifted| {
        Ok(ChainIdentification {
            edges: vec![],
            interventions_used: intervened.len(),
            shifted,
            ambiguity: Some(reason),
        })
    };

    // In a chain, an intervened node at position k shifts exactly the n − k
    // nodes after it (p included).
    let mut position: Vec<Option<usize>> = vec![None; n];
    for (x, set) in &shifted {
        if !set.contains(&p) {
            return ambiguous(format!("clamping {x} did not shift the outcome"), shifted);
        }
        if set.len() > n {
            return ambiguous(
                format!("clamping {x} shifted too many coordinates"),
                shifted,
            );
        }
        let k = n - set.len();
        if position.contains(&Some(k)) {
            return ambiguous(
                format!("two interventions imply chain position {k}"),
                shifted,
            );
        }
        position[*x] = Some(k);
    }
    let taken: BTreeSet<usize> = position.iter().flatten().copied().collect();
    let free: Vec<usize> = (0..n).filter(|k| !taken.contains(k)).collect();
    let unplaced: Vec<usize> = (0..n).filter(|&v| position[v].is_none()).collect();
    if free.len() != unplaced.len() {
        return ambiguous("positions do not cover the chain".into(), shifted);
    }
    for (v, k) in unplaced.iter().zip(&free) {
        position[*v] = Some(*k);
    }
    let mut order = vec![0; n];
    for (v, k) in position.iter().enumerate() {
        order[k.expect("all placed")] = v;
    }
    for (x, set) in &shifted {
        let k = position[*x].expect("placed");
        let expected: BTreeSet<usize> = order[k + 1..].iter().copied().chain([p]).collect();
        let got: BTreeSet<usize> = set.iter().copied().collect();
        if expected != got {
            return ambiguous(
                format!("shift pattern of {x} is not a chain suffix"),
                shifted,
            );
        }
    }
    let mut path = order;
    path.push(p);
    Ok(ChainIdentification {
        edges: path.windows(2).map(|w| (w[0], w[1])).collect(),
        interventions_used: intervened.len(),
        shifted,
        ambiguity: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn chain_fixture_edges() {
        let f = ChainFixture::new(&[0.8, 0.8, 0.8], 1.0, None).unwrap();
        assert_eq!(f.edges(), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(f.scm.b0()[(1, 0)], -0.8);
    }

    #[test]
    fn two_node_chain_needs_one_intervention() {
        let f = ChainFixture::new(&[0.8, 0.8], 1.0, None).unwrap();
        let r = identify_chain(&SvarProbe::new(f.scm.clone()), 2, 200, 3).unwrap();
        assert_eq!(r.interventions_used, 1);
        assert_eq!(r.edges, f.edges());
    }

    #[test]
    fn diagonal_b0_contemporaneous() {
        let b0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 2.0]);
        let scm = LinearSvarScm::new(b0, vec![], DVector::from_element(2, 1.0)).unwrap();
        let truth = scm.clamp_response(0).unwrap()[1];
        assert!((truth - 0.25).abs() < 1e-12);
        let (e, se) = estimate_contemporaneous(&SvarProbe::new(scm), 4000, 9).unwrap();
        assert!((e[0] - truth).abs() < 3.0 * se[0], "{} vs {truth}", e[0]);
    }

    #[test]
    fn horizon_limit() {
        let f = ChainFixture::new(&[0.5], 1.0, None).unwrap();
        let probe = SvarProbe::new(f.scm);
        assert!(matches!(
            estimate_lagged(&probe, 100, 10, 1),
            Err(SvarError::Horizon { .. })
        ));
    }
}
