use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::verify::verify;
use super::{
    ConceptDiagnosis, GapLevel, GapReport, Lens, SimError, SimProblem, Simulator, TrialOutcome,
};

pub const TEMPLATE_VERSION: &str = "v1";
pub const SYSTEM_PROMPT: &str = "You are an expert mathematician.";
const SOLVE_LINE: &str = "Solve the problem. Put the final answer in \\boxed{}.";
const API_KEY_VAR: &str = "CIKA_API_KEY";

pub fn baseline_prompt(statement: &str) -> String {
    format!("{statement}\n\n{SOLVE_LINE}")
}

pub fn do_prompt(statement: &str, concepts: &[String]) -> String {
    let mut out = format!("{statement}\n\n");
    for c in concepts {
        out.push_str(&format!("Assume mastery of {c}.\n"));
    }
    out.push_str(SOLVE_LINE);
    out
}

pub fn lens_prompt(statement: &str, lens: Lens) -> String {
    format!(
        "{statement}\n\nApproach the problem using {}.\n{SOLVE_LINE}",
        lens.name()
    )
}

pub fn gap_prompt(statement: &str, failed_answer: &str) -> String {
    format!(
        "{statement}\n\nA previous attempt answered:\n{failed_answer}\n\n\
         List the mathematical concepts this problem requires, one per line, \
         as `concept: LEVEL` where LEVEL is HIGH, MEDIUM or LOW according to \
         how well the previous attempt understood the concept."
    )
}

/// Reads `concept: LEVEL` lines; other lines are ignored.
pub fn parse_gap_reply(reply: &str) -> GapReport {
    let mut diagnoses: Vec<ConceptDiagnosis> = Vec::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']).trim();
        let Some((name, level)) = line.rsplit_once(':') else {
            continue;
        };
        let name = name.trim().trim_matches('`').trim();
        let Ok(level) = level
            .trim()
            .trim_matches(['`', '*', '.'])
            .parse::<GapLevel>()
        else {
            continue;
        };
        if name.is_empty() || diagnoses.iter().any(|d| d.concept == name) {
            continue;
        }
        diagnoses.push(ConceptDiagnosis {
            concept: name.to_string(),
            level,
        });
    }
    let parse_warning = diagnoses.is_empty();
    if parse_warning {
        log::warn!("concept-gap reply had no `concept: LEVEL` lines");
    }
    GapReport {
        diagnoses,
        parse_warning,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sent with every request when set.
    pub seed: Option<u64>,
    pub max_in_flight: usize,
    pub retries: usize,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub audit_log: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model: "default".into(),
            temperature: 0.7,
            max_tokens: 2048,
            seed: None,
            max_in_flight: 8,
            retries: 3,
            backoff_ms: 250,
            timeout_secs: 300,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body; field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(config: &EndpointConfig, user: String) -> Self {
        Self {
            model: config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: SYSTEM_PROMPT.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: user,
                },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            seed: config.seed,
        }
    }

    pub fn to_body(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

struct Gate {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            busy: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().expect("gate poisoned");
        while *busy >= self.limit {
            busy = self.freed.wait(busy).expect("gate poisoned");
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Simulator that asks an OpenAI-compatible chat-completions server.
///
/// The trial seed is not sent; sampling randomness lives on the server.
pub struct EndpointSimulator {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: Gate,
    audit: Option<Mutex<File>>,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    template_version: &'a str,
    request: &'a str,
    status: Option<u16>,
    response: Option<&'a str>,
    error: Option<&'a str>,
    latency_ms: u64,
}

impl EndpointSimulator {
    /// Reads the bearer token from `CIKA_API_KEY`; requests go out without
    /// an `Authorization` header when it is unset.
    pub fn new(config: EndpointConfig) -> Result<Self, SimError> {
        let api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: EndpointConfig, api_key: Option<String>) -> Result<Self, SimError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let audit = match &config.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| SimError::Audit(format!("{}: {e}", path.display())))?,
            )),
            None => None,
        };
        Ok(Self {
            gate: Gate::new(config.max_in_flight),
            config,
            agent,
            api_key,
            audit,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn audit(&self, record: &AuditRecord<'_>) -> Result<(), SimError> {
        if let Some(file) = &self.audit {
            let line = serde_json::to_string(record).expect("audit record serializes");
            let mut f = file.lock().expect("audit log poisoned");
            writeln!(f, "{line}").map_err(|e| SimError::Audit(e.to_string()))?;
        }
        Ok(())
    }

    fn post_once(&self, body: &str) -> Result<(u16, String), String> {
        let mut req = self
            .agent
            .post(self.url())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    /// Sends one completion request, retrying transport failures, 429 and 5xx.
    pub fn complete(&self, request: &ChatRequest) -> Result<(String, u64), SimError> {
        let body = request.to_body();
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = self.post_once(&body);
            let latency_ms = started.elapsed().as_millis() as u64;
            let retryable = match &result {
                Ok((status, _)) => *status == 429 || *status >= 500,
                Err(_) => true,
            };
            let (status, text, error) = match &result {
                Ok((s, t)) => (Some(*s), Some(t.as_str()), None),
                Err(e) => (None, None, Some(e.as_str())),
            };
            self.audit(&AuditRecord {
                template_version: TEMPLATE_VERSION,
                request: &body,
                status,
                response: text,
                error,
                latency_ms,
            })?;
            if retryable && attempt <= self.config.retries {
                let wait = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                log::debug!("retrying completion after attempt {attempt} in {wait} ms");
                std::thread::sleep(Duration::from_millis(wait));
                continue;
            }
            return match result {
                Err(message) => Err(SimError::Transport {
                    attempts: attempt,
                    message,
                }),
                Ok((status, text)) if !(200..300).contains(&status) => {
                    Err(SimError::Http { status, body: text })
                }
                Ok((_, text)) => Ok((extract_content(&text)?, latency_ms)),
            };
        }
    }

    fn answer_trial(&self, problem: &SimProblem, user: String) -> Result<TrialOutcome, SimError> {
        let (content, latency_ms) = self.complete(&ChatRequest::new(&self.config, user))?;
        let verdict = verify(&content, &problem.gold_answer);
        Ok(TrialOutcome {
            correct: verdict.normalized,
            strict_match: verdict.strict,
            raw_answer: content,
            latency_ms,
        })
    }
}

fn extract_content(body: &str) -> Result<String, SimError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| SimError::MalformedCompletion(format!("invalid JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| SimError::MalformedCompletion("missing choices[0].message.content".into()))
}

impl Simulator for EndpointSimulator {
    fn baseline_trial(&self, problem: &SimProblem, _seed: u64) -> Result<TrialOutcome, SimError> {
        self.answer_trial(problem, baseline_prompt(&problem.statement))
    }

    fn do_trial(
        &self,
        problem: &SimProblem,
        concepts: &[String],
        _seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        if concepts.is_empty() {
            return Err(SimError::EmptyConceptSet);
        }
        self.answer_trial(problem, do_prompt(&problem.statement, concepts))
    }

    fn concept_gap(
        &self,
        problem: &SimProblem,
        failed_answer: &str,
        _seed: u64,
    ) -> Result<GapReport, SimError> {
        let request = ChatRequest::new(&self.config, gap_prompt(&problem.statement, failed_answer));
        let (content, _) = self.complete(&request)?;
        Ok(parse_gap_reply(&content))
    }

    fn lens_trial(
        &self,
        problem: &SimProblem,
        lens: Lens,
        _seed: u64,
    ) -> Result<TrialOutcome, SimError> {
        self.answer_trial(problem, lens_prompt(&problem.statement, lens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn do_prompt_lists_each_concept() {
        let p = do_prompt("Find x.", &["Vieta's formulas".into(), "AM-GM".into()]);
        assert_eq!(
            p,
            "Find x.\n\nAssume mastery of Vieta's formulas.\nAssume mastery of AM-GM.\n\
             Solve the problem. Put the final answer in \\boxed{}."
        );
    }

    #[test]
    fn body_field_order() {
        let cfg = EndpointConfig {
            model: "m".into(),
            temperature: 0.5,
            max_tokens: 16,
            ..EndpointConfig::default()
        };
        let body = ChatRequest::new(&cfg, "hi".into()).to_body();
        assert_eq!(
            body,
            r#"{"model":"m","messages":[{"role":"system","content":"You are an expert mathematician."},{"role":"user","content":"hi"}],"temperature":0.5,"max_tokens":16}"#
        );
        let with_seed = ChatRequest::new(
            &EndpointConfig {
                seed: Some(3),
                ..cfg
            },
            "hi".into(),
        );
        assert!(with_seed
            .to_body()
            .ends_with(r#""max_tokens":16,"seed":3}"#));
    }

    #[test]
    fn gap_reply_parsing() {
        let r = parse_gap_reply(
            "- Modular arithmetic: LOW\nnoise\n* Induction: **MEDIUM**\nGeometry: HIGH",
        );
        assert!(!r.parse_warning);
        let levels: Vec<_> = r
            .diagnoses
            .iter()
            .map(|d| (d.concept.as_str(), d.level))
            .collect();
        assert_eq!(
            levels,
            vec![
                ("Modular arithmetic", GapLevel::Low),
                ("Induction", GapLevel::Medium),
                ("Geometry", GapLevel::High)
            ]
        );
        let bad = parse_gap_reply("I cannot tell.");
        assert!(bad.parse_warning && bad.diagnoses.is_empty());
    }

    #[test]
    fn content_extraction_errors() {
        assert!(matches!(
            extract_content("nope"),
            Err(SimError::MalformedCompletion(_))
        ));
        assert!(matches!(
            extract_content("{}"),
            Err(SimError::MalformedCompletion(_))
        ));
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"\\boxed{1}"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "\\boxed{1}");
    }
}
