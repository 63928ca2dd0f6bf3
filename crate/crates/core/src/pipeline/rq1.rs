use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PipelineConfig, PipelineError};
use crate::icp::{estimate_baseline, estimate_icp, GraphConfig, IcpError, IcpEstimate};
use crate::retrieval::{extract_concepts, Bm25Index};
use crate::rng::{derive_seed, name_key};
use crate::scm::MasteryLink;
use crate::simulator::{SimError, SimProblem, Simulator};
use crate::stats::{mean, paired_t, standard_error, PairedT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Name of the injected no-effect concept when problems carry a model.
    pub synthetic_name: String,
    pub synthetic_link: MasteryLink,
    /// Domain -> control concept for problems without a model.
    pub cross_domain: BTreeMap<String, String>,
    pub default_concept: String,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let cross_domain = [
            ("algebra", "Angle Bisector Theorem"),
            ("number theory", "Angle Bisector Theorem"),
            ("combinatorics", "Angle Bisector Theorem"),
            ("geometry", "Vieta's Formulas"),
            ("calculus", "Chinese Remainder Theorem"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            synthetic_name: "negative control".into(),
            synthetic_link: MasteryLink { a: 0.0, b: 0.0 },
            cross_domain,
            default_concept: "Angle Bisector Theorem".into(),
        }
    }
}

impl ControlConfig {
    pub fn endpoint_concept(&self, domain: &str) -> &str {
        self.cross_domain
            .get(&domain.to_lowercase())
            .map_or(self.default_concept.as_str(), String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rq1Config {
    pub band_low: f64,
    pub band_high: f64,
    pub control: ControlConfig,
}

impl Default for Rq1Config {
    fn default() -> Self {
        Self {
            band_low: 0.10,
            band_high: 0.50,
            control: ControlConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Rq1Error {
    #[error("only {surviving} problem(s) left after screening; need at least 2")]
    TooFewProblems { surviving: usize },
    #[error("screening band [{0}, {1}] is not a subinterval of [0, 1]")]
    Band(f64, f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Icp(#[from] IcpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    pub problem_id: String,
    pub p_bar_obs: f64,
    pub n_candidates: usize,
    pub top1_concept: String,
    pub top1_icp: f64,
    pub top1_sigma: f64,
    pub control_concept: String,
    pub control_icp: f64,
    pub control_sigma: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub problem_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub rows: Vec<Rq1Row>,
    pub excluded: Vec<Exclusion>,
    pub top1_mean: f64,
    pub top1_se: Option<f64>,
    pub top1_sigma_mean: f64,
    pub control_mean: f64,
    pub control_se: Option<f64>,
    pub control_sigma_mean: f64,
    /// Paired statistics of `top1 − control`; `t`, `p_value` and `cohens_d`
    /// are absent when the differences have zero variance.
    pub paired: PairedT,
    pub top1_positive_rate: f64,
    pub top1_significant_rate: f64,
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.digits$}"))
}

impl Rq1Report {
    /// Aggregate table: one row per arm plus the paired test.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "problems: {} (excluded {})\n",
            self.rows.len(),
            self.excluded.len()
        ));
        s.push_str("| Metric | Mean | SE | Mean per-problem sigma |\n");
        s.push_str("|---|---|---|---|\n");
        s.push_str(&format!(
            "| Top-1 ICP | {:+.3} | {} | {:.3} |\n",
            self.top1_mean,
            fmt_opt(self.top1_se, 3),
            self.top1_sigma_mean
        ));
        s.push_str(&format!(
            "| Neg. control ICP | {:+.3} | {} | {:.3} |\n",
            self.control_mean,
            fmt_opt(self.control_se, 3),
            self.control_sigma_mean
        ));
        s.push_str(&format!("| Advantage | {:+.3} | | |\n", self.paired.mean));
        s.push_str(&format!(
            "paired t({}) = {}, p = {}, Cohen's d = {}\n",
            self.paired.n.saturating_sub(1),
            fmt_opt(self.paired.t, 3),
            fmt_opt(self.paired.p_value, 4),
            fmt_opt(self.paired.cohens_d, 3)
        ));
        s.push_str(&format!(
            "top-1 positive: {:.1}%  top-1 significant: {:.1}%\n",
            100.0 * self.top1_positive_rate,
            100.0 * self.top1_significant_rate
        ));
        s
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), Rq1Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Screened {
    Row(Rq1Row, bool),
    Excluded(Exclusion),
}

fn probe_problem(
    problem: &SimProblem,
    sim: &dyn Simulator,
    index: Option<&Bm25Index>,
    config: &PipelineConfig,
    rq1: &Rq1Config,
    graph: GraphConfig,
    seed: u64,
) -> Result<Screened, Rq1Error> {
    let exclude = |reason: String| {
        Ok(Screened::Excluded(Exclusion {
            problem_id: problem.id.clone(),
            reason,
        }))
    };
    let probe_seed = derive_seed(seed, "probe", 0);
    let baseline = estimate_baseline(sim, problem, config.n_obs, probe_seed)?;
    if baseline.p_bar_obs < rq1.band_low || baseline.p_bar_obs > rq1.band_high {
        return exclude(format!("baseline {:.3} outside band", baseline.p_bar_obs));
    }

    let report = sim.concept_gap(problem, "", derive_seed(seed, "concept-gap", 0))?;
    let mut candidates: Vec<String> = Vec::new();
    for d in report.diagnoses {
        if !candidates.contains(&d.concept) {
            candidates.push(d.concept);
        }
    }
    if let Some(index) = index {
        let hits: Vec<_> = index
            .query(&problem.statement, config.bm25_top_k)
            .map_err(PipelineError::from)?
            .into_iter()
            .filter(|h| h.score > 0.0)
            .collect();
        for tag in extract_concepts(&hits) {
            if !candidates.contains(&tag) {
                candidates.push(tag);
            }
        }
    }
    candidates.retain(|c| sim.resolves(problem, c));
    if candidates.is_empty() {
        return exclude("no candidate concepts".into());
    }

    let estimates: Vec<IcpEstimate> = candidates
        .iter()
        .map(|c| {
            estimate_icp(
                sim,
                problem,
                c,
                config.m_trials,
                baseline,
                config.degenerate_rule,
                probe_seed,
            )
        })
        .collect::<Result<_, _>>()?;
    let top = estimates
        .iter()
        .fold(None::<&IcpEstimate>, |best, e| match best {
            Some(b) if b.e_hat >= e.e_hat => Some(b),
            _ => Some(e),
        })
        .expect("nonempty");

    let control = match &problem.binding {
        Some(binding) => {
            let mut with_control = problem.clone();
            with_control.binding = Some(
                binding
                    .with_null_concept(&rq1.control.synthetic_name, rq1.control.synthetic_link)?,
            );
            estimate_icp(
                sim,
                &with_control,
                &rq1.control.synthetic_name,
                config.m_trials,
                baseline,
                config.degenerate_rule,
                probe_seed,
            )?
        }
        None => estimate_icp(
            sim,
            problem,
            rq1.control.endpoint_concept(&problem.domain),
            config.m_trials,
            baseline,
            config.degenerate_rule,
            probe_seed,
        )?,
    };
    let significant = top.z_score().is_some_and(|z| z > graph.z_crit);
    Ok(Screened::Row(
        Rq1Row {
            problem_id: problem.id.clone(),
            p_bar_obs: baseline.p_bar_obs,
            n_candidates: candidates.len(),
            top1_concept: top.concept.clone(),
            top1_icp: top.e_hat,
            top1_sigma: top.sigma_hat,
            control_concept: control.concept.clone(),
            control_icp: control.e_hat,
            control_sigma: control.sigma_hat,
            advantage: top.e_hat - control.e_hat,
        },
        significant,
    ))
}

/// Screens problems by baseline rate, ranks every candidate by ICP, and
/// compares the top-ranked concept against a negative control.
pub fn run_rq1_protocol(
    problems: &[SimProblem],
    sim: &dyn Simulator,
    index: Option<&Bm25Index>,
    config: &PipelineConfig,
    rq1: &Rq1Config,
    seed: u64,
) -> Result<Rq1Report, Rq1Error> {
    config.validate()?;
    if !(0.0..=1.0).contains(&rq1.band_low)
        || !(0.0..=1.0).contains(&rq1.band_high)
        || rq1.band_low > rq1.band_high
    {
        return Err(Rq1Error::Band(rq1.band_low, rq1.band_high));
    }
    let graph = config.graph_config()?;
    let screened: Vec<Screened> = problems
        .par_iter()
        .map(|p| {
            let s = derive_seed(seed, "problem", name_key(&p.id));
            probe_problem(p, sim, index, config, rq1, graph, s)
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut significant = 0usize;
    for s in screened {
        match s {
            Screened::Row(r, sig) => {
                significant += usize::from(sig);
                rows.push(r);
            }
            Screened::Excluded(e) => excluded.push(e),
        }
    }
    if rows.len() < 2 {
        return Err(Rq1Error::TooFewProblems {
            surviving: rows.len(),
        });
    }
    let top1: Vec<f64> = rows.iter().map(|r| r.top1_icp).collect();
    let control: Vec<f64> = rows.iter().map(|r| r.control_icp).collect();
    let adv: Vec<f64> = rows.iter().map(|r| r.advantage).collect();
    let n = rows.len() as f64;
    Ok(Rq1Report {
        top1_mean: mean(&top1),
        top1_se: standard_error(&top1),
        top1_sigma_mean: rows.iter().map(|r| r.top1_sigma).sum::<f64>() / n,
        control_mean: mean(&control),
        control_se: standard_error(&control),
        control_sigma_mean: rows.iter().map(|r| r.control_sigma).sum::<f64>() / n,
        paired: paired_t(&adv).expect("at least two rows"),
        top1_positive_rate: top1.iter().filter(|&&x| x > 0.0).count() as f64 / n,
        top1_significant_rate: significant as f64 / n,
        rows,
        excluded,
    })
}
