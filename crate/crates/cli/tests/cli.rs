use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cika::simulator::{MockBehavior, MockServer};
use tempfile::TempDir;

fn cika(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cika"))
        .args(args)
        .env_remove("CIKA_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn sample_complexity_prints_trial_count() {
    let o = cika(&["sample-complexity", "50", "0.1", "0.05"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1521 trials per concept"));
}

#[test]
fn sample_complexity_rejects_bad_epsilon() {
    let o = cika(&["sample-complexity", "50", "0", "0.05"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn failing_threshold_exits_two_and_names_it() {
    let dir = TempDir::new().unwrap();
    let o = cika(&[
        "--out",
        &out_arg(dir.path()),
        "icp-convergence",
        "--ms",
        "10,11",
        "--reps",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("failing criterion: convergence slope"));
    assert!(dir.path().join("convergence.csv").is_file());
}

#[test]
fn pipeline_suite_resumes_from_checkpoints() {
    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path());
    let o = cika(&[
        "--out",
        &out,
        "--seed",
        "3",
        "make-suite",
        "--kind",
        "latent",
        "--n",
        "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let problems = dir.path().join("problems.jsonl");
    let corpus = dir.path().join("corpus.jsonl");
    let run = || {
        cika(&[
            "--out",
            &out,
            "--seed",
            "3",
            "pipeline",
            "--problems",
            problems.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
        ])
    };
    let first = run();
    assert!(first.status.success(), "{}", stderr(&first));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    let results = fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 10);
    let checkpoints = fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .count();
    assert_eq!(checkpoints, 10);

    let second = run();
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(
        fs::read_to_string(dir.path().join("summary.csv")).unwrap(),
        summary
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("results.jsonl")).unwrap(),
        results
    );
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let o = cika(&[
            "--out",
            &out_arg(d.path()),
            "--seed",
            "11",
            "--jobs",
            "2",
            "confounding-demo",
            "--samples",
            "3000",
            "--w-d",
            "1,3",
        ]);
        assert!(
            o.status.code() == Some(0) || o.status.code() == Some(2),
            "{}",
            stderr(&o)
        );
    }
    let read = |d: &TempDir| fs::read(d.path().join("confounding.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn chain_ident_small_run_passes() {
    let dir = TempDir::new().unwrap();
    let o = cika(&[
        "--out",
        &out_arg(dir.path()),
        "chain-ident",
        "--n",
        "4",
        "--seeds",
        "5",
        "--trials",
        "200",
    ]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let csv = fs::read_to_string(dir.path().join("chain.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn report_renders_svg_and_rejects_empty_dir() {
    let empty = TempDir::new().unwrap();
    let o = cika(&["report", "--dir", &out_arg(empty.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no experiment CSVs"));

    let dir = TempDir::new().unwrap();
    let out = out_arg(dir.path());
    let o = cika(&[
        "--out",
        &out,
        "confounding-demo",
        "--samples",
        "2000",
        "--w-d",
        "2",
    ]);
    assert!(
        o.status.code() == Some(0) || o.status.code() == Some(2),
        "{}",
        stderr(&o)
    );
    let o = cika(&["--out", &out, "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("confounding.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn endpoint_mode_requires_url() {
    let o = cika(&["--mode", "endpoint", "sample-complexity", "5", "0.1", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--endpoint-url"));
}

#[test]
fn endpoint_url_outside_endpoint_mode_is_rejected() {
    let o = cika(&[
        "--endpoint-url",
        "http://127.0.0.1:1",
        "sample-complexity",
        "5",
        "0.1",
        "0.1",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_flags_are_rejected() {
    for args in [
        &["--delta", "1.5", "sample-complexity", "5", "0.1", "0.1"][..],
        &["--alpha", "1.0", "sample-complexity", "5", "0.1", "0.1"][..],
        &["--budget", "0", "sample-complexity", "5", "0.1", "0.1"][..],
    ] {
        let o = cika(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let o = cika(&["--mode", "bogus", "sample-complexity", "5", "0.1", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"delta": 2.0}"#).unwrap();
    let o = cika(&[
        "--config",
        cfg.to_str().unwrap(),
        "sample-complexity",
        "5",
        "0.1",
        "0.1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = cika(&[
        "--config",
        cfg.to_str().unwrap(),
        "--delta",
        "0.2",
        "sample-complexity",
        "5",
        "0.1",
        "0.1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn rq1_runs_against_mock_endpoint() {
    let server = MockServer::start(
        "127.0.0.1:0",
        MockBehavior {
            gap_reply: "Vieta's Formulas: LOW\nAM-GM Inequality: MEDIUM".into(),
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let dir = TempDir::new().unwrap();
    let problems = dir.path().join("problems.jsonl");
    fs::write(
        &problems,
        "{\"id\":\"w-0\",\"statement\":\"Find x.\",\"gold_answer\":\"42\",\"domain\":\"algebra\"}\n\
         {\"id\":\"w-1\",\"statement\":\"Find y.\",\"gold_answer\":\"42\",\"domain\":\"geometry\"}\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"pipeline": {"m_trials": 2, "n_obs": 2}, "rq1": {"band_low": 0.0, "band_high": 1.0}}"#,
    )
    .unwrap();
    let url = server.base_url();
    let o = cika(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "endpoint",
        "--endpoint-url",
        &url,
        "--model",
        "mock-model",
        "--out",
        &out_arg(dir.path()),
        "rq1",
        "--problems",
        problems.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let rows = fs::read_to_string(dir.path().join("rq1_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    let requests = server.requests();
    assert!(!requests.is_empty());
    assert!(requests
        .iter()
        .all(|r| r.contains("\"model\":\"mock-model\"")));
    let audit = fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), requests.len());
}
