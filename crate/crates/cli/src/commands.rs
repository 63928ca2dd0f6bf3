use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use cika::experiments::{
    bias_plateaus, chain_study, confounding_sweep, delta_decomposition, icp_convergence,
    mean_regret_rate, regret_comparison, regret_vs_delta, witness_study, write_csv, ConfoundingRow,
};
use cika::fixtures::{
    concept_corpus, latent_knowledge_suite, lens_saturating_problem, pair_threshold_problem,
    rq1_suite, single_effect,
};
use cika::icp::{confounding_bias_experiment, hoeffding_tail, required_samples};
use cika::pipeline::{
    load_problems, run_rq1_protocol, run_suite, write_problems, write_results_jsonl,
    write_summary_csv, SuiteOptions, SuiteSummary,
};
use cika::retrieval::{ingest, Bm25Index};
use cika::rng::derive_seed;
use cika::scm::DiscreteStudentScm;
use cika::search::{run_bandit, BanditInstance, Policy, UcbParams};
use cika::simulator::{
    perturb, EndpointSimulator, Lens, MockBehavior, MockServer, ScmBinding, SimProblem, Simulator,
    SimulatorFidelity, SyntheticSimulator,
};

use crate::config::{load_json, Mode, RunConfig};
use crate::{report, Cli, Command, SuiteKind};

pub enum Verdict {
    Pass,
    Fail(Vec<String>),
}

/// Named thresholds checked by a command.
#[derive(Default)]
struct Checks(Vec<(String, bool, String)>);

impl Checks {
    fn add(&mut self, name: &str, pass: bool, detail: String) {
        self.0.push((name.to_string(), pass, detail));
    }

    fn finish(self) -> Verdict {
        let mut failed = Vec::new();
        for (name, pass, detail) in self.0 {
            println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
            if !pass {
                failed.push(name);
            }
        }
        if failed.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail(failed)
        }
    }
}

pub fn run(cli: Cli) -> Result<Verdict> {
    let cfg = cli.global.resolve()?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::SampleComplexity {
            k,
            epsilon,
            confidence_delta,
        } => sample_complexity(k, epsilon, confidence_delta),
        Command::MockServer {
            bind,
            reply,
            gap_reply,
        } => mock_server(&bind, reply, gap_reply),
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.out.clone());
            for path in report::render_dir(&dir)? {
                println!("wrote {}", path.display());
            }
            Ok(Verdict::Pass)
        }
        command => {
            fs::create_dir_all(&cfg.out)
                .with_context(|| format!("creating {}", cfg.out.display()))?;
            match command {
                Command::ConfoundingDemo { samples, w_d } => confounding_demo(&cfg, samples, &w_d),
                Command::IcpConvergence { ms, reps } => convergence(&cfg, &ms, reps),
                Command::DeltaDecomposition { deltas, ms, reps } => {
                    delta_grid(&cfg, &deltas, &ms, reps)
                }
                Command::Regret {
                    horizon,
                    seeds,
                    adversarial_horizon,
                    adversarial_seeds,
                    delta_sweep,
                    estimate_trials,
                } => regret(
                    &cfg,
                    horizon,
                    seeds,
                    (adversarial_horizon, adversarial_seeds),
                    &delta_sweep,
                    estimate_trials,
                ),
                Command::ChainIdent { n, seeds, trials } => chain(&cfg, &n, seeds, trials),
                Command::NonidentWitness { instances } => witness(&cfg, instances),
                Command::Pipeline {
                    problems,
                    corpus,
                    index,
                } => pipeline(&cfg, &problems, corpus.as_deref(), index.as_deref()),
                Command::Rq1 {
                    problems,
                    corpus,
                    index,
                } => rq1(&cfg, &problems, corpus.as_deref(), index.as_deref()),
                Command::Ingest { corpus, index_out } => {
                    let idx = ingest(&corpus)?;
                    let path = index_out.unwrap_or_else(|| cfg.out.join("index.json"));
                    idx.save(&path)?;
                    println!(
                        "indexed {} documents (avgdl {:.2}) into {}",
                        idx.len(),
                        idx.avgdl(),
                        path.display()
                    );
                    Ok(Verdict::Pass)
                }
                Command::MakeSuite { kind, n } => make_suite(&cfg, kind, n),
                Command::SampleComplexity { .. }
                | Command::MockServer { .. }
                | Command::Report { .. } => {
                    unreachable!("handled above")
                }
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_rows<T: Serialize>(cfg: &RunConfig, name: &str, rows: &[T]) -> Result<PathBuf> {
    let path = cfg.out.join(name);
    write_csv(rows, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn load_scm(cfg: &RunConfig) -> Result<Option<DiscreteStudentScm>> {
    cfg.scm.as_deref().map(load_json).transpose()
}

fn build_simulator(cfg: &RunConfig) -> Result<Box<dyn Simulator>> {
    Ok(match cfg.mode {
        Mode::Synthetic => Box::new(SyntheticSimulator),
        Mode::Perturbed => Box::new(perturb(
            SyntheticSimulator,
            SimulatorFidelity::new(cfg.delta)?,
        )),
        Mode::Endpoint => {
            let mut ep = cfg
                .endpoint
                .clone()
                .ok_or_else(|| anyhow!("endpoint settings missing"))?;
            if ep.audit_log.is_none() {
                ep.audit_log = Some(cfg.out.join("audit.jsonl"));
            }
            Box::new(EndpointSimulator::new(ep)?)
        }
    })
}

fn synthetic_only(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.mode == Mode::Endpoint {
        bail!("{what} runs against synthetic models only");
    }
    Ok(())
}

fn confounding_demo(cfg: &RunConfig, samples: usize, w_ds: &[f64]) -> Result<Verdict> {
    synthetic_only(cfg, "confounding-demo")?;
    let mut checks = Checks::default();
    let rows: Vec<ConfoundingRow> = match load_scm(cfg)? {
        Some(scm) => (0..scm.n_concepts())
            .map(|j| {
                let r = confounding_bias_experiment(
                    &scm,
                    j,
                    samples,
                    samples,
                    derive_seed(cfg.seed, "concept", j as u64),
                )?;
                Ok(ConfoundingRow {
                    label: format!("concept {j}"),
                    w_d: scm.outcome_link().w_d,
                    b: scm.mastery_links()[j].b,
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
            .collect::<Result<_>>()?,
        None => {
            let rows = confounding_sweep(w_ds, samples, cfg.seed)?;
            let null = &rows[0];
            checks.add(
                "null-confounding control",
                null.obs_z().is_some_and(|z| z.abs() < 3.0) && null.icp_z().abs() < 3.0,
                format!(
                    "obs bias/SE {:.2}, ICP bias/SE {:.2}",
                    null.obs_z().unwrap_or(f64::NAN),
                    null.icp_z()
                ),
            );
            if let Some(strong) = rows[1..].iter().max_by(|a, b| a.w_d.total_cmp(&b.w_d)) {
                let z = strong.obs_z().unwrap_or(f64::NAN);
                checks.add(
                    "strong confounding",
                    z > 5.0 && strong.icp_z().abs() < 3.0,
                    format!(
                        "{}: obs bias/SE {z:.1}, ICP bias/SE {:.2}",
                        strong.label,
                        strong.icp_z()
                    ),
                );
            }
            rows
        }
    };
    for r in &rows {
        println!(
            "{:<18} e*={:+.4} obs={} icp={:+.4} bias_obs={} bias_icp={:+.4}",
            r.label,
            r.e_true,
            r.beta_obs.map_or("n/a".into(), |b| format!("{b:+.4}")),
            r.e_icp,
            r.bias_obs.map_or("n/a".into(), |b| format!("{b:+.4}")),
            r.bias_icp
        );
    }
    let worst = rows.iter().map(|r| r.backdoor_residual).fold(0.0, f64::max);
    checks.add(
        "backdoor identity",
        worst < 1e-12,
        format!("max residual {worst:.2e}"),
    );
    write_rows(cfg, "confounding.csv", &rows)?;
    Ok(checks.finish())
}

fn effect_problem(cfg: &RunConfig) -> Result<(SimProblem, f64)> {
    let scm = load_scm(cfg)?.unwrap_or_else(single_effect);
    let target = scm.icp_target(0)?;
    let names = (0..scm.n_concepts()).map(|j| format!("c{j}")).collect();
    let problem = SimProblem {
        id: "convergence".into(),
        statement: String::new(),
        gold_answer: String::new(),
        domain: String::new(),
        binding: Some(ScmBinding::new(scm, names)?),
    };
    Ok((problem, target))
}

fn convergence(cfg: &RunConfig, ms: &[usize], reps: usize) -> Result<Verdict> {
    synthetic_only(cfg, "icp-convergence")?;
    let (problem, target) = effect_problem(cfg)?;
    let sim = build_simulator(cfg)?;
    let study = icp_convergence(&*sim, &problem, "c0", target, ms, reps, cfg.seed)?;
    write_rows(cfg, "convergence.csv", &study.rows)?;
    for r in &study.rows {
        println!("M={:<6} RMSE={:.5}", r.m, r.rmse);
    }
    let mut checks = Checks::default();
    match study.slope {
        Some(s) => checks.add(
            "convergence slope",
            (-0.6..=-0.4).contains(&s),
            format!("{s:.3}"),
        ),
        None => checks.add(
            "zero-variance fixture",
            study.rows.iter().all(|r| r.rmse == 0.0),
            "RMSE is 0 at every M".into(),
        ),
    }
    if let (Some(first), Some(last)) = (study.rows.first(), study.rows.last()) {
        checks.add(
            "RMSE decreases",
            study.rows.len() < 2 || first.rmse >= last.rmse,
            format!("{:.5} -> {:.5}", first.rmse, last.rmse),
        );
    }
    Ok(checks.finish())
}

fn delta_grid(cfg: &RunConfig, deltas: &[f64], ms: &[usize], reps: usize) -> Result<Verdict> {
    synthetic_only(cfg, "delta-decomposition")?;
    let (problem, _) = effect_problem(cfg)?;
    let rows = delta_decomposition(&problem, "c0", deltas, ms, reps, cfg.seed)?;
    write_rows(cfg, "delta_decomposition.csv", &rows)?;
    let plateaus = bias_plateaus(&rows);
    let mut checks = Checks::default();
    let monotone = plateaus.windows(2).all(|w| w[1].1 >= w[0].1);
    checks.add(
        "bias plateau monotone in delta",
        monotone,
        plateaus
            .iter()
            .map(|(d, b, _)| format!("{d}:{b:.4}"))
            .collect::<Vec<_>>()
            .join(" "),
    );
    if let Some(&(_, b, se)) = plateaus.iter().find(|p| p.0 == 0.0) {
        checks.add(
            "unperturbed plateau",
            b < 3.0 * se,
            format!("{b:.4} vs 3*SE {:.4}", 3.0 * se),
        );
    }
    Ok(checks.finish())
}

#[derive(Serialize)]
struct CurvePoint<'a> {
    instance: &'a str,
    policy: &'a str,
    step: u64,
    mean_cumulative_regret: f64,
}

#[derive(Serialize)]
struct RegretSummaryRow<'a> {
    instance: &'a str,
    horizon: u64,
    seeds: usize,
    ucb1_mean: f64,
    causal_mean: f64,
    wins: usize,
    losses: usize,
    ties: usize,
    p_value: f64,
    gamma0_identical: bool,
}

fn mean_curve(
    instance: &BanditInstance,
    policy: Policy,
    horizon: u64,
    seeds: usize,
    seed: u64,
) -> Result<Vec<(u64, f64)>> {
    let stride = (horizon / 200).max(1);
    let traces: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            run_bandit(
                instance,
                policy,
                horizon,
                derive_seed(seed, "bandit-seed", s as u64),
            )
            .map(|t| {
                t.steps
                    .iter()
                    .filter(|st| st.step % stride == 0 || st.step == horizon)
                    .map(|st| st.cumulative_regret)
                    .collect()
            })
        })
        .collect::<Result<_, _>>()?;
    let steps: Vec<u64> = (1..=horizon)
        .filter(|t| t % stride == 0 || *t == horizon)
        .collect();
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (
                t,
                traces.iter().map(|tr| tr[i]).sum::<f64>() / traces.len().max(1) as f64,
            )
        })
        .collect())
}

fn regret(
    cfg: &RunConfig,
    horizon: u64,
    seeds: usize,
    adversarial: (u64, usize),
    delta_sweep: &[f64],
    estimate_trials: usize,
) -> Result<Verdict> {
    let params = UcbParams::new(cfg.pipeline.beta, cfg.pipeline.gamma)?;
    let instances = [
        ("two-arm", BanditInstance::two_arm()),
        ("ten-arm", BanditInstance::ten_arm()),
    ];
    let mut checks = Checks::default();
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    let mut comparisons = Vec::new();
    for (name, inst) in &instances {
        let c = regret_comparison(name, inst, params, horizon, seeds, cfg.seed)?;
        for (label, policy) in [
            ("ucb1", Policy::Ucb1 { beta: params.beta }),
            ("math-causal-ucb", Policy::MathCausalUcb(params)),
        ] {
            for (step, r) in mean_curve(inst, policy, horizon, seeds, cfg.seed)? {
                curves.push((name.to_string(), label, step, r));
            }
        }
        checks.add(
            &format!("{name} causal advantage"),
            c.causal_mean < c.ucb1_mean && c.sign.wins > c.sign.losses && c.sign.p_value < 0.01,
            format!(
                "{:.2} vs {:.2}, sign test p={:.2e}",
                c.causal_mean, c.ucb1_mean, c.sign.p_value
            ),
        );
        checks.add(
            &format!("{name} gamma=0 trace equality"),
            c.gamma0_identical,
            format!("{seeds} seeds"),
        );
        comparisons.push(c);
    }
    for c in &comparisons {
        summary.push(RegretSummaryRow {
            instance: &c.instance,
            horizon,
            seeds,
            ucb1_mean: c.ucb1_mean,
            causal_mean: c.causal_mean,
            wins: c.sign.wins,
            losses: c.sign.losses,
            ties: c.sign.ties,
            p_value: c.sign.p_value,
            gamma0_identical: c.gamma0_identical,
        });
    }
    let points: Vec<CurvePoint> = curves
        .iter()
        .map(|(i, p, s, r)| CurvePoint {
            instance: i,
            policy: p,
            step: *s,
            mean_cumulative_regret: *r,
        })
        .collect();
    write_rows(cfg, "regret_curves.csv", &points)?;
    write_rows(cfg, "regret_summary.csv", &summary)?;

    let (adv_horizon, adv_seeds) = adversarial;
    if adv_seeds > 0 {
        let flipped = BanditInstance::two_arm().with_e_hats(&[-0.8, 0.0])?;
        let rate = mean_regret_rate(&flipped, params, adv_horizon, adv_seeds, cfg.seed)?;
        checks.add(
            "adversarial effects stay sublinear",
            rate < 0.05,
            format!("R_T/T = {rate:.4} at T = {adv_horizon}"),
        );
    }
    if !delta_sweep.is_empty() {
        let rows = regret_vs_delta(
            &BanditInstance::ten_arm(),
            params,
            delta_sweep,
            estimate_trials,
            horizon,
            seeds,
            cfg.seed,
        )?;
        #[derive(Serialize)]
        struct Row {
            delta: f64,
            mean_regret: f64,
        }
        let flat: Vec<Row> = rows
            .iter()
            .map(|r| Row {
                delta: r.delta,
                mean_regret: r.mean_regret,
            })
            .collect();
        write_rows(cfg, "regret_delta.csv", &flat)?;
        checks.add(
            "regret nondecreasing in delta",
            rows.windows(2)
                .all(|w| w[1].mean_regret >= w[0].mean_regret),
            rows.iter()
                .map(|r| format!("{}:{:.1}", r.delta, r.mean_regret))
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    Ok(checks.finish())
}

fn chain(cfg: &RunConfig, ns: &[usize], seeds: usize, trials: usize) -> Result<Verdict> {
    let rows = chain_study(ns, seeds, trials, cfg.seed)?;
    write_rows(cfg, "chain.csv", &rows)?;
    let mut checks = Checks::default();
    for r in &rows {
        checks.add(
            &format!("chain n={}", r.n),
            r.success_rate >= 0.95 && r.exact_interventions == r.trials,
            format!(
                "{}/{} recovered with {} interventions",
                r.successes,
                r.trials,
                r.n - 1
            ),
        );
    }
    Ok(checks.finish())
}

fn witness(cfg: &RunConfig, instances: usize) -> Result<Verdict> {
    let rows = witness_study(instances, cfg.seed)?;
    write_rows(cfg, "witness.csv", &rows)?;
    let min_diff = rows
        .iter()
        .map(|r| r.b0_difference)
        .fold(f64::INFINITY, f64::min);
    let max_res = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let mut checks = Checks::default();
    checks.add(
        "witness differs",
        min_diff >= 1e-3,
        format!("min max-norm difference {min_diff:.3e}"),
    );
    checks.add(
        "reduced form preserved",
        max_res < 1e-10,
        format!("max Frobenius residual {max_res:.2e}"),
    );
    Ok(checks.finish())
}

fn sample_complexity(k: usize, epsilon: f64, delta: f64) -> Result<Verdict> {
    let m = required_samples(k, epsilon, delta)?;
    let tail = hoeffding_tail(m as usize, epsilon)?;
    println!("K={k} epsilon={epsilon} delta={delta}: {m} trials per concept");
    println!(
        "per-concept tail at that M: {tail:.3e}; union bound {:.3e}",
        tail * k as f64
    );
    Ok(Verdict::Pass)
}

fn load_index(corpus: Option<&Path>, index: Option<&Path>) -> Result<Option<Bm25Index>> {
    Ok(match (corpus, index) {
        (Some(c), _) => Some(ingest(c)?),
        (None, Some(i)) => Some(Bm25Index::load(i)?),
        (None, None) => None,
    })
}

fn pipeline(
    cfg: &RunConfig,
    problems: &Path,
    corpus: Option<&Path>,
    index: Option<&Path>,
) -> Result<Verdict> {
    let problems = load_problems(problems)?;
    let index = load_index(corpus, index)?;
    let sim = build_simulator(cfg)?;
    let options = SuiteOptions {
        checkpoint_dir: Some(cfg.out.join("checkpoints")),
    };
    let results = run_suite(
        &problems,
        &*sim,
        index.as_ref(),
        &cfg.pipeline,
        cfg.seed,
        &options,
    )?;
    let mut w = create(&cfg.out.join("results.jsonl"))?;
    write_results_jsonl(&results, &mut w)?;
    w.flush()?;
    write_summary_csv(&results, create(&cfg.out.join("summary.csv"))?)?;
    let summary = SuiteSummary::from_results(&results);
    let mut w = create(&cfg.out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.flush()?;
    println!(
        "{} problems: SRV {} | MCTS {} | Recovery {} | Unsolved {}",
        summary.problems,
        summary.srv_solved,
        summary.mcts_solved,
        summary.recovery_solved,
        summary.unsolved
    );
    if let Some(f) = summary.cka_fraction {
        println!("CKA solved {:.1}% of SRV failures", 100.0 * f);
    }
    println!(
        "mean max-ICP: solved {} | unsolved {}",
        summary
            .mean_max_icp_solved
            .map_or("n/a".into(), |v| format!("{v:.3}")),
        summary
            .mean_max_icp_unsolved
            .map_or("n/a".into(), |v| format!("{v:.3}"))
    );
    println!(
        "answer calls {} (+{} diagnostic)",
        summary.total_llm_calls, summary.total_diagnostic_calls
    );
    println!("wrote {}", cfg.out.display());
    Ok(Verdict::Pass)
}

fn rq1(
    cfg: &RunConfig,
    problems: &Path,
    corpus: Option<&Path>,
    index: Option<&Path>,
) -> Result<Verdict> {
    let problems = load_problems(problems)?;
    let index = load_index(corpus, index)?;
    let sim = build_simulator(cfg)?;
    let report = run_rq1_protocol(
        &problems,
        &*sim,
        index.as_ref(),
        &cfg.pipeline,
        &cfg.rq1,
        cfg.seed,
    )?;
    let table = report.to_table();
    print!("{table}");
    fs::write(cfg.out.join("rq1_report.txt"), &table)?;
    report.write_rows_csv(create(&cfg.out.join("rq1_rows.csv"))?)?;
    let mut w = create(&cfg.out.join("rq1_report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.flush()?;
    println!("wrote {}", cfg.out.display());
    Ok(Verdict::Pass)
}

fn mock_server(bind: &str, reply: String, gap_reply: String) -> Result<Verdict> {
    let server = MockServer::start(
        bind,
        MockBehavior {
            reply,
            gap_reply,
            ..MockBehavior::default()
        },
    )?;
    println!("mock server listening on {}", server.base_url());
    server.wait();
    Ok(Verdict::Pass)
}

fn make_suite(cfg: &RunConfig, kind: SuiteKind, n: usize) -> Result<Verdict> {
    let problems = match kind {
        SuiteKind::Latent => {
            let corpus = cfg.out.join("corpus.jsonl");
            let mut w = create(&corpus)?;
            for doc in concept_corpus() {
                serde_json::to_writer(&mut w, &doc)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            println!("wrote {}", corpus.display());
            latent_knowledge_suite(n, cfg.seed)
        }
        SuiteKind::Rq1 => rq1_suite(n, cfg.seed)?,
        SuiteKind::PairThreshold => vec![pair_threshold_problem()],
        SuiteKind::LensSaturating => vec![lens_saturating_problem(Lens::ExtremalPrinciple)],
    };
    let path = cfg.out.join("problems.jsonl");
    let mut w = create(&path)?;
    write_problems(&problems, &mut w)?;
    w.flush()?;
    println!("wrote {} problems to {}", problems.len(), path.display());
    Ok(Verdict::Pass)
}
