use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use cika::pipeline::{PipelineConfig, Rq1Config};
use cika::simulator::EndpointConfig;

const ENDPOINT_N_OBS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Synthetic,
    Perturbed,
    Endpoint,
}

/// Settings shared by every command. Loaded from `--config`, then
/// overridden by flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Simulator fidelity gap for `perturbed` mode.
    pub delta: f64,
    pub scm: Option<PathBuf>,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub pipeline: PipelineConfig,
    pub rq1: Rq1Config,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            delta: 0.0,
            scm: None,
            seed: 0,
            jobs: None,
            out: PathBuf::from("out"),
            pipeline: PipelineConfig::default(),
            rq1: Rq1Config::default(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Simulator backing the run.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Ground-truth model JSON.
    #[arg(long, global = true)]
    pub scm: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub endpoint_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    #[arg(long, global = true)]
    pub m_trials: Option<usize>,
    /// Baseline attempts per problem (default 10, or 5 in endpoint mode).
    #[arg(long, global = true)]
    pub n_obs: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Simulator fidelity gap δ for `--mode perturbed`.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
}

impl GlobalArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let (mut cfg, n_obs_in_file) = match &self.config {
            Some(path) => {
                let raw: serde_json::Value = load_json(path)?;
                let has_n_obs = raw.pointer("/pipeline/n_obs").is_some();
                let cfg = serde_json::from_value(raw)
                    .with_context(|| format!("parsing {}", path.display()))?;
                (cfg, has_n_obs)
            }
            None => (RunConfig::default(), false),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(p) = &self.scm {
            cfg.scm = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        let p = &mut cfg.pipeline;
        if let Some(v) = self.top_k {
            p.bm25_top_k = v;
        }
        if let Some(v) = self.budget {
            p.budget_b = v;
        }
        if let Some(v) = self.m_trials {
            p.m_trials = v;
        }
        match self.n_obs {
            Some(v) => p.n_obs = v,
            None if cfg.mode == Mode::Endpoint && !n_obs_in_file => p.n_obs = ENDPOINT_N_OBS,
            None => {}
        }
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.beta {
            p.beta = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if self.endpoint_url.is_some() || self.model.is_some() {
            let ep = cfg.endpoint.get_or_insert_with(EndpointConfig::default);
            if let Some(u) = &self.endpoint_url {
                ep.base_url = u.clone();
            }
            if let Some(m) = &self.model {
                ep.model = m.clone();
            }
        }
        match (cfg.mode, cfg.endpoint.is_some()) {
            (Mode::Endpoint, false) => {
                bail!("--mode endpoint needs --endpoint-url or an `endpoint` section in the config")
            }
            (Mode::Synthetic | Mode::Perturbed, true) => {
                bail!("endpoint settings are only valid with --mode endpoint")
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&cfg.delta) {
            bail!("--delta must lie in [0, 1]");
        }
        cfg.pipeline
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Harness {
        #[command(flatten)]
        global: GlobalArgs,
    }

    fn resolve(args: &[&str]) -> Result<RunConfig> {
        Harness::try_parse_from(std::iter::once("cika").chain(args.iter().copied()))
            .unwrap()
            .global
            .resolve()
    }

    #[test]
    fn endpoint_mode_lowers_baseline_default() {
        assert_eq!(resolve(&[]).unwrap().pipeline.n_obs, 10);
        let cfg = resolve(&["--mode", "endpoint", "--endpoint-url", "http://x"]).unwrap();
        assert_eq!(cfg.pipeline.n_obs, 5);
        let cfg = resolve(&[
            "--mode",
            "endpoint",
            "--endpoint-url",
            "http://x",
            "--n-obs",
            "8",
        ])
        .unwrap();
        assert_eq!(cfg.pipeline.n_obs, 8);
    }

    #[test]
    fn config_file_n_obs_is_kept_in_endpoint_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"mode": "endpoint", "endpoint": {"base_url": "http://x"}, "pipeline": {"n_obs": 12}}"#,
        )
        .unwrap();
        let cfg = resolve(&["--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(cfg.pipeline.n_obs, 12);
        assert_eq!(cfg.endpoint.unwrap().temperature, 0.7);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"seed": 4, "pipeline": {"budget_b": 30}}"#).unwrap();
        let cfg = resolve(&["--config", path.to_str().unwrap(), "--seed", "9"]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.pipeline.budget_b, 30);
        assert_eq!(cfg.pipeline.m_trials, 10);
    }
}
