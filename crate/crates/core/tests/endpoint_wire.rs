use cika::simulator::{
    EndpointConfig, EndpointSimulator, MockBehavior, MockServer, SimError, SimProblem, Simulator,
};

fn problem() -> SimProblem {
    SimProblem {
        id: "wire".into(),
        statement: "Find x.".into(),
        gold_answer: "42".into(),
        domain: "algebra".into(),
        binding: None,
    }
}

fn simulator(
    server: &MockServer,
    retries: usize,
    audit: Option<std::path::PathBuf>,
) -> EndpointSimulator {
    EndpointSimulator::with_api_key(
        EndpointConfig {
            base_url: server.base_url(),
            model: "mock-model".into(),
            retries,
            backoff_ms: 1,
            audit_log: audit,
            ..EndpointConfig::default()
        },
        Some("test-key".into()),
    )
    .unwrap()
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(
        "127.0.0.1:0",
        MockBehavior {
            fail_first: 2,
            fail_status: 503,
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let sim = simulator(&server, 3, Some(audit.clone()));
    let t = sim.baseline_trial(&problem(), 0).unwrap();
    assert!(t.correct);
    assert_eq!(server.requests().len(), 3);
    let lines = std::fs::read_to_string(audit).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn exhausted_retries_surface_an_error() {
    let server = MockServer::start(
        "127.0.0.1:0",
        MockBehavior {
            fail_first: 10,
            fail_status: 500,
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let sim = simulator(&server, 1, None);
    let err = sim.baseline_trial(&problem(), 0).unwrap_err();
    assert!(
        matches!(
            err,
            SimError::Http { status: 500, .. } | SimError::Transport { .. }
        ),
        "{err}"
    );
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(
        "127.0.0.1:0",
        MockBehavior {
            fail_first: 1,
            fail_status: 400,
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let sim = simulator(&server, 3, None);
    assert!(sim.baseline_trial(&problem(), 0).is_err());
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn gap_reply_becomes_diagnoses() {
    let server = MockServer::start(
        "127.0.0.1:0",
        MockBehavior {
            gap_reply: "Vieta's Formulas: LOW\nLaw of Sines: HIGH".into(),
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let sim = simulator(&server, 0, None);
    let report = sim.concept_gap(&problem(), "0", 0).unwrap();
    assert_eq!(report.diagnoses.len(), 2);
    assert_eq!(report.diagnoses[0].concept, "Vieta's Formulas");
    assert!(report.diagnoses[0].level.is_deficient());
    assert!(!report.diagnoses[1].level.is_deficient());
}
