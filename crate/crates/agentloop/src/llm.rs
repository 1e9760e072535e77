//! Cognitive-engine abstraction: a uniform completion interface with
//! interchangeable backends.
//!
//! Three backends ship with the crate: a live HTTP client speaking the
//! OpenAI-compatible chat-completions wire format, a scripted scenario backend
//! replaying a canned transcript for deterministic offline tests, and a
//! record/replay pair keyed on a content hash of each request.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn wire(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Message {
        Message { role: Role::User, content: content.into() }
    }
}

/// One completion call. `label` identifies the caller (`planner`, `factory`,
/// `actor:<id>`) so scripted scenarios can route on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub label: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(label: impl Into<String>, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest {
            messages,
            label: label.into(),
            temperature: 0.0,
            max_tokens: 4096,
        }
    }

    pub fn latest_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Content hash used by the record/replay backends. Decoding parameters
    /// are deliberately excluded so tolerance-irrelevant knobs do not miss.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        h.update([0]);
        for m in &self.messages {
            h.update(m.role.wire().as_bytes());
            h.update([0]);
            h.update(m.content.as_bytes());
            h.update([0]);
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("scenario mismatch at step {step}: expected a request containing {expected:?}")]
    ScenarioMismatch { step: usize, expected: String },
    #[error("replay miss for request hash {0}")]
    ReplayMiss(String),
}

/// Uniform completion interface implemented by every backend.
pub trait Backend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError>;
}

// ---------------------------------------------------------------------------
// Scripted scenario backend
// ---------------------------------------------------------------------------

/// One canned step: an optional label filter (prefix match, so `actor`
/// matches `actor:2.1`), an optional required substring of the latest user
/// message, and the response to return.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioStep {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub expect: Option<String>,
    pub response: String,
}

impl ScenarioStep {
    fn matches(&self, request: &CompletionRequest) -> bool {
        if let Some(label) = &self.label {
            if !request.label.starts_with(label.as_str()) {
                return false;
            }
        }
        if let Some(expect) = &self.expect {
            let latest = request.latest_user_message().unwrap_or_default();
            if !latest.contains(expect.as_str()) {
                return false;
            }
        }
        true
    }
}

/// A deterministic transcript. In strict mode steps must be consumed in
/// order and every request must match the next step; otherwise the first
/// unconsumed matching step is served.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub strict: bool,
    #[serde(default, rename = "step")]
    pub steps: Vec<ScenarioStep>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Backend(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| LlmError::Backend(format!("{}: {e}", path.display())))
    }
}

pub struct ScriptedBackend {
    scenario: Scenario,
    consumed: Vec<bool>,
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> ScriptedBackend {
        let consumed = vec![false; scenario.steps.len()];
        ScriptedBackend { scenario, consumed }
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|c| !**c).count()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        if self.scenario.strict {
            let next = self
                .consumed
                .iter()
                .position(|c| !c)
                .ok_or_else(|| LlmError::ScenarioMismatch {
                    step: self.scenario.steps.len(),
                    expected: "(no steps left)".into(),
                })?;
            let step = &self.scenario.steps[next];
            if !step.matches(request) {
                return Err(LlmError::ScenarioMismatch {
                    step: next,
                    expected: step.expect.clone().unwrap_or_default(),
                });
            }
            self.consumed[next] = true;
            return Ok(step.response.clone());
        }
        for (i, step) in self.scenario.steps.iter().enumerate() {
            if !self.consumed[i] && step.matches(request) {
                self.consumed[i] = true;
                return Ok(step.response.clone());
            }
        }
        Err(LlmError::ScenarioMismatch {
            step: self.consumed.iter().filter(|c| **c).count(),
            expected: format!("(no unconsumed step matches label `{}`)", request.label),
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.openai.com`. `/v1/chat/completions` is
    /// appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl HttpConfig {
    /// Read endpoint settings from `AGENTLOOP_BASE_URL`, `AGENTLOOP_MODEL`
    /// and `AGENTLOOP_API_KEY`.
    pub fn from_env() -> Result<HttpConfig, LlmError> {
        let base_url = std::env::var("AGENTLOOP_BASE_URL")
            .map_err(|_| LlmError::Backend("AGENTLOOP_BASE_URL is not set".into()))?;
        let model = std::env::var("AGENTLOOP_MODEL")
            .map_err(|_| LlmError::Backend("AGENTLOOP_MODEL is not set".into()))?;
        Ok(HttpConfig {
            base_url,
            model,
            api_key: std::env::var("AGENTLOOP_API_KEY").ok(),
            timeout_secs: 120,
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<HttpBackend, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

impl Backend for HttpBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let messages: Vec<WireMessage> = request
            .messages
            .iter()
            .map(|m| WireMessage { role: m.role.wire(), content: &m.content })
            .collect();
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(LlmError::Backend(format!("http {status}: {text}")));
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| LlmError::Backend(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Backend("response carried no choices".into()))
    }
}

// ---------------------------------------------------------------------------
// Record / replay backends
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    hash: String,
    response: String,
}

/// Serves responses from a cache file written by [`RecordingBackend`];
/// one JSON record per line.
pub struct ReplayBackend {
    cache: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<ReplayBackend, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Backend(format!("{}: {e}", path.display())))?;
        let mut cache = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: CacheRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::Backend(format!("bad cache line: {e}")))?;
            cache.insert(rec.hash, rec.response);
        }
        Ok(ReplayBackend { cache })
    }
}

impl Backend for ReplayBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let hash = request.content_hash();
        self.cache
            .get(&hash)
            .cloned()
            .ok_or(LlmError::ReplayMiss(hash))
    }
}

/// Write-through wrapper: forwards to an inner backend and appends each
/// (hash, response) pair to the cache file.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    path: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn Backend>, path: PathBuf) -> RecordingBackend {
        RecordingBackend { inner, path }
    }
}

impl Backend for RecordingBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        let rec = CacheRecord {
            hash: request.content_hash(),
            response: response.clone(),
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        writeln!(file, "{}", serde_json::to_string(&rec).unwrap())
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(label: &str, user: &str) -> CompletionRequest {
        CompletionRequest::new(label, vec![Message::user(user)])
    }

    fn two_step_scenario(strict: bool) -> Scenario {
        Scenario {
            strict,
            steps: vec![
                ScenarioStep {
                    label: Some("planner".into()),
                    expect: Some("decompose".into()),
                    response: "plan".into(),
                },
                ScenarioStep {
                    label: Some("actor".into()),
                    expect: Some("hotels".into()),
                    response: "act".into(),
                },
            ],
        }
    }

    #[test]
    fn scripted_serves_matching_step() {
        let mut b = ScriptedBackend::new(two_step_scenario(false));
        assert_eq!(b.complete(&req("planner", "please decompose this")).unwrap(), "plan");
        assert_eq!(b.complete(&req("actor:2.1", "find hotels")).unwrap(), "act");
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn strict_out_of_order_names_expected_substring() {
        let mut b = ScriptedBackend::new(two_step_scenario(true));
        let err = b.complete(&req("actor:2.1", "find hotels")).unwrap_err();
        match err {
            LlmError::ScenarioMismatch { step, expected } => {
                assert_eq!(step, 0);
                assert_eq!(expected, "decompose");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_strict_skips_unmatched_steps() {
        let mut b = ScriptedBackend::new(two_step_scenario(false));
        assert_eq!(b.complete(&req("actor:2.1", "find hotels")).unwrap(), "act");
        // The planner step is still there for the planner.
        assert_eq!(b.complete(&req("planner", "decompose the goal")).unwrap(), "plan");
    }

    #[test]
    fn matcher_uses_latest_user_message() {
        let mut b = ScriptedBackend::new(two_step_scenario(false));
        let r = CompletionRequest::new(
            "planner",
            vec![
                Message::user("decompose everything"),
                Message::user("now revise instead"),
            ],
        );
        // Latest user message lacks "decompose", so no match.
        assert!(b.complete(&r).is_err());
    }

    #[test]
    fn hash_ignores_decoding_parameters() {
        let mut a = req("planner", "x");
        let mut b = req("planner", "x");
        a.temperature = 0.0;
        b.temperature = 0.9;
        b.max_tokens = 17;
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), req("actor:1", "x").content_hash());
    }

    #[test]
    fn record_then_replay_round_trips() {
        let tmp = tempfile::TempDir::new().unwrap();
        let cache = tmp.path().join("cache.jsonl");
        let inner = ScriptedBackend::new(two_step_scenario(false));
        let mut rec = RecordingBackend::new(Box::new(inner), cache.clone());
        let r1 = req("planner", "decompose the goal");
        let r2 = req("actor:2.1", "find hotels");
        let a1 = rec.complete(&r1).unwrap();
        let a2 = rec.complete(&r2).unwrap();

        let mut replay = ReplayBackend::load(&cache).unwrap();
        assert_eq!(replay.complete(&r1).unwrap(), a1);
        assert_eq!(replay.complete(&r2).unwrap(), a2);
        assert!(matches!(
            replay.complete(&req("planner", "something new")).unwrap_err(),
            LlmError::ReplayMiss(_)
        ));
    }
}
