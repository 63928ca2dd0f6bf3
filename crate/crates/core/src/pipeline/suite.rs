//! Problem suites: JSONL input, parallel runs with per-problem checkpoints,
//! and the summary tables.
//!
//! Checkpoint layout: one `<slug>-<key>.json` file per finished problem in
//! the checkpoint directory, where `slug` is the problem id with characters
//! outside `[A-Za-z0-9_-]` replaced by `_` and `key` is a 16-digit hex hash
//! of the id. Files are written to a `.tmp` sibling and renamed into place.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{run_pipeline, PhaseSolved, PipelineConfig, PipelineFailure, PipelineResult};
use crate::retrieval::Bm25Index;
use crate::rng::{derive_seed, name_key};
use crate::simulator::{SimProblem, Simulator};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Problem(#[from] Box<PipelineFailure>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn load_problems(path: &Path) -> Result<Vec<SimProblem>, SuiteError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: SimProblem = serde_json::from_str(&line).map_err(|e| SuiteError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_problems<W: Write>(problems: &[SimProblem], mut out: W) -> Result<(), SuiteError> {
    for p in problems {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn problem_seed(seed: u64, id: &str) -> u64 {
    derive_seed(seed, "problem", name_key(id))
}

pub fn checkpoint_path(dir: &Path, id: &str) -> PathBuf {
    let slug: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{slug}-{:016x}.json", name_key(id)))
}

fn read_checkpoint(path: &Path, id: &str) -> Option<PipelineResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: PipelineResult = serde_json::from_str(&text).ok()?;
    (r.problem_id == id).then_some(r)
}

fn write_checkpoint(path: &Path, result: &PipelineResult) -> Result<(), SuiteError> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut f, result)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every problem, reusing checkpointed results. Output order follows
/// the input order regardless of scheduling.
pub fn run_suite(
    problems: &[SimProblem],
    sim: &dyn Simulator,
    index: Option<&Bm25Index>,
    config: &PipelineConfig,
    seed: u64,
    options: &SuiteOptions,
) -> Result<Vec<PipelineResult>, SuiteError> {
    let mut seen = HashSet::new();
    for p in problems {
        if !seen.insert(p.id.as_str()) {
            return Err(SuiteError::DuplicateId(p.id.clone()));
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    problems
        .par_iter()
        .map(|p| {
            let path = options
                .checkpoint_dir
                .as_ref()
                .map(|d| checkpoint_path(d, &p.id));
            if let Some(r) = path.as_ref().and_then(|path| read_checkpoint(path, &p.id)) {
                return Ok(r);
            }
            let r =
                run_pipeline(p, sim, index, config, problem_seed(seed, &p.id)).map_err(Box::new)?;
            if let Some(path) = &path {
                write_checkpoint(path, &r)?;
            }
            Ok(r)
        })
        .collect()
}

pub fn write_results_jsonl<W: Write>(
    results: &[PipelineResult],
    mut out: W,
) -> Result<(), SuiteError> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    problem_id: &'a str,
    phase_solved: &'a str,
    correct: bool,
    llm_calls: usize,
    diagnostic_calls: usize,
    k0: usize,
    k_star: usize,
    rollouts: usize,
    lenses: usize,
    lens_used: String,
    max_icp: f64,
}

/// One row per problem.
pub fn write_summary_csv<W: Write>(results: &[PipelineResult], out: W) -> Result<(), SuiteError> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(SummaryRow {
            problem_id: &r.problem_id,
            phase_solved: r.phase_solved.as_str(),
            correct: r.correct,
            llm_calls: r.llm_call_count,
            diagnostic_calls: r.calls.diagnostic,
            k0: r.candidates.len(),
            k_star: r.activation_set.len(),
            rollouts: r.calls.rollouts,
            lenses: r.calls.lenses,
            lens_used: r
                .lens_used
                .map(|l| l.name().to_string())
                .unwrap_or_default(),
            max_icp: r.max_icp,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Suite totals. The max-ICP split covers problems that failed the plain
/// attempt, since solved-at-SRV problems are never probed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub problems: usize,
    pub srv_solved: usize,
    pub mcts_solved: usize,
    pub recovery_solved: usize,
    pub unsolved: usize,
    /// CKA-solved over SRV-failed.
    pub cka_fraction: Option<f64>,
    pub mean_max_icp_solved: Option<f64>,
    pub mean_max_icp_unsolved: Option<f64>,
    pub total_llm_calls: usize,
    pub total_diagnostic_calls: usize,
}

impl SuiteSummary {
    pub fn from_results(results: &[PipelineResult]) -> Self {
        let count = |ph: PhaseSolved| results.iter().filter(|r| r.phase_solved == ph).count();
        let srv_solved = count(PhaseSolved::Srv);
        let mcts_solved = count(PhaseSolved::Mcts);
        let recovery_solved = count(PhaseSolved::Recovery);
        let failed = results.len() - srv_solved;
        let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        Self {
            problems: results.len(),
            srv_solved,
            mcts_solved,
            recovery_solved,
            unsolved: count(PhaseSolved::Unsolved),
            cka_fraction: (failed > 0)
                .then(|| (mcts_solved + recovery_solved) as f64 / failed as f64),
            mean_max_icp_solved: avg(results
                .iter()
                .filter(|r| r.phase_solved.is_cka())
                .map(|r| r.max_icp)
                .collect()),
            mean_max_icp_unsolved: avg(results
                .iter()
                .filter(|r| r.phase_solved == PhaseSolved::Unsolved)
                .map(|r| r.max_icp)
                .collect()),
            total_llm_calls: results.iter().map(|r| r.llm_call_count).sum(),
            total_diagnostic_calls: results.iter().map(|r| r.calls.diagnostic).sum(),
        }
    }
}
