mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::GlobalArgs;

#[derive(Debug, Parser)]
#[command(
    name = "cika",
    version,
    about = "Causal knowledge activation experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteKind {
    Latent,
    Rq1,
    PairThreshold,
    LensSaturating,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Observational versus interventional bias over a confounding sweep.
    ConfoundingDemo {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 3.0])]
        w_d: Vec<f64>,
    },
    /// RMSE of the ICP estimate as the trial count grows.
    IcpConvergence {
        #[arg(long, value_delimiter = ',', default_values_t = [10, 40, 160, 640])]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
    /// ICP bias and RMSE over a grid of simulator fidelity gaps and trial counts.
    DeltaDecomposition {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.4])]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 1000, 10_000])]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Cumulative regret of UCB1 and Math-Causal-UCB.
    Regret {
        #[arg(long, default_value_t = 10_000)]
        horizon: u64,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 100_000)]
        adversarial_horizon: u64,
        #[arg(long, default_value_t = 5)]
        adversarial_seeds: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4])]
        delta_sweep: Vec<f64>,
        /// Trials per arm when estimating effects for the fidelity sweep.
        #[arg(long, default_value_t = 2000)]
        estimate_trials: usize,
    },
    /// Chain orientation from single-concept clamps.
    ChainIdent {
        #[arg(long, value_delimiter = ',', default_values_t = [4, 5, 6, 7, 8])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Observationally equivalent structural pairs on random instances.
    NonidentWitness {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Trials per concept for a uniform `ε` guarantee over `K` concepts.
    SampleComplexity {
        k: usize,
        epsilon: f64,
        confidence_delta: f64,
    },
    /// Runs the full pipeline on a problem suite.
    Pipeline {
        #[arg(long)]
        problems: PathBuf,
        /// Corpus JSONL to index for candidate retrieval.
        #[arg(long, conflicts_with = "index")]
        corpus: Option<PathBuf>,
        /// Prebuilt index cache.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Top-1 ICP against a negative control on screened problems.
    Rq1 {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, conflicts_with = "index")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// SVG charts from the CSVs in a results directory.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Builds and caches a BM25 index from a corpus JSONL.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Cache file (default `<out>/index.json`).
        #[arg(long)]
        index_out: Option<PathBuf>,
    },
    /// Serves a chat-completions mock until interrupted.
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value = "\\boxed{42}")]
        reply: String,
        #[arg(long, default_value = "")]
        gap_reply: String,
    },
    /// Writes a generated problem suite as JSONL.
    MakeSuite {
        #[arg(long, value_enum)]
        kind: SuiteKind,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Verdict::Pass) => ExitCode::SUCCESS,
        Ok(commands::Verdict::Fail(names)) => {
            for n in &names {
                eprintln!("failing criterion: {n}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
