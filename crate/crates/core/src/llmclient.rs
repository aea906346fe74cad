//! Chat-completion client used for classification, with an offline mock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureId;
use crate::prompt::{prompt_hash, AssembledPrompt};
use crate::retry::{RetryPolicy, Retryable};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const API_KEY_ENV: &str = "GRAMRAC_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmBackend {
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    /// Total attempts per request, the first one included.
    pub max_retries: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    #[serde(with = "duration_secs")]
    pub backoff_base: Duration,
    /// Requests allowed in flight across benchmark items.
    pub max_in_flight: usize,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl Default for LlmBackend {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model_id: "gpt-4o".to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_retries: 3,
            timeout: Duration::from_secs(120),
            backoff_base: Duration::from_millis(500),
            max_in_flight: 2,
        }
    }
}

impl LlmBackend {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.endpoint.trim().is_empty() {
            return Err(LlmError::Config("endpoint not configured".into()));
        }
        if self.max_retries == 0 {
            return Err(LlmError::Config("max_retries must be at least 1".into()));
        }
        Ok(())
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_retries,
            base_delay: self.backoff_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn single_user(model: &str, temperature: f64, content: &str) -> Self {
        Self {
            model: model.to_string(),
            temperature,
            messages: vec![ChatMessage {
                role: "user".into(),
                content: content.to_string(),
            }],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("chat endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode chat response: {0}")]
    Decode(String),
    #[error("chat response has no content")]
    EmptyContent,
    #[error("mock backend has no response for prompt {0}")]
    MockMiss(String),
}

impl Retryable for LlmError {
    fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// Sends one chat request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Reads `choices[0].message.content`.
pub fn decode_chat_response(body: &str) -> Result<String, LlmError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| LlmError::Decode(e.to_string()))?;
    let content = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .unwrap_or_default();
    if content.is_empty() {
        Err(LlmError::EmptyContent)
    } else {
        Ok(content)
    }
}

pub struct HttpChatTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(backend: &LlmBackend) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(backend.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: backend.endpoint.clone(),
            api_key: std::env::var(API_KEY_ENV).ok(),
        })
    }
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        decode_chat_response(&body)
    }
}

/// One substring rule of a mock fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub response: String,
}

/// Canned responses for [`MockChatTransport`]. Lookup order: exact prompt
/// hash, then the first rule whose substrings all occur in the prompt, then
/// `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockLlmFixture {
    pub by_hash: HashMap<String, String>,
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

impl MockLlmFixture {
    pub fn constant(response: &str) -> Self {
        Self {
            default: Some(response.to_string()),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn lookup(&self, prompt: &str) -> Option<&str> {
        if let Some(r) = self.by_hash.get(&prompt_hash(prompt)) {
            return Some(r);
        }
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|s| prompt.contains(s.as_str())))
            .map(|r| r.response.as_str())
            .or(self.default.as_deref())
    }
}

/// Offline chat backend. Counts calls, keeps every request, and can be told
/// to fail a number of times first.
#[derive(Debug, Default)]
pub struct MockChatTransport {
    fixture: MockLlmFixture,
    fail_first: AtomicUsize,
    calls: AtomicUsize,
    captured: Mutex<Vec<ChatRequest>>,
}

impl MockChatTransport {
    pub fn new(fixture: MockLlmFixture) -> Self {
        Self {
            fixture,
            ..Self::default()
        }
    }

    /// The next `n` calls fail with HTTP 503.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<ChatRequest> {
        self.captured.lock().expect("mock lock").clone()
    }
}

impl ChatTransport for MockChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.captured
            .lock()
            .expect("mock lock")
            .push(request.clone());
        let failing = self
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(LlmError::Status {
                status: 503,
                body: "mock outage".into(),
            });
        }
        let prompt = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        self.fixture
            .lookup(prompt)
            .map(str::to_string)
            .ok_or_else(|| LlmError::MockMiss(prompt_hash(prompt)))
    }
}

/// The record of one classification request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub prompt_hash: String,
    pub feature_id: FeatureId,
    pub n_paragraphs: usize,
    pub response_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub backend_error: Option<String>,
}

impl LlmExchange {
    pub fn is_ok(&self) -> bool {
        self.backend_error.is_none()
    }
}

/// Sends `prompt` as the only user message. Failures are recorded in the
/// exchange rather than returned.
pub fn complete(
    prompt: &AssembledPrompt,
    backend: &LlmBackend,
    transport: &dyn ChatTransport,
) -> LlmExchange {
    let start = Instant::now();
    let request = ChatRequest::single_user(&backend.model_id, backend.temperature, &prompt.text);
    let (outcome, attempts) = match backend.validate() {
        Err(e) => (Err(e), 0),
        Ok(()) => backend.retry_policy().run(|_| transport.send(&request)),
    };
    let (response_text, backend_error) = match outcome {
        Ok(text) => (text, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    LlmExchange {
        prompt_hash: prompt.hash(),
        feature_id: prompt.feature_id,
        n_paragraphs: prompt.n_paragraphs,
        response_text,
        latency_ms: start.elapsed().as_millis() as u64,
        attempt_count: attempts,
        backend_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str) -> AssembledPrompt {
        AssembledPrompt {
            text: text.to_string(),
            n_paragraphs: 0,
            feature_id: FeatureId::Wals81A,
            char_count: text.chars().count(),
        }
    }

    fn fast() -> LlmBackend {
        LlmBackend {
            backoff_base: Duration::ZERO,
            ..LlmBackend::default()
        }
    }

    #[test]
    fn echo_mock_answers_in_one_attempt() {
        let mock = MockChatTransport::new(MockLlmFixture::constant("Conclusion: SOV"));
        let ex = complete(&prompt("hi"), &fast(), &mock);
        assert_eq!(ex.response_text, "Conclusion: SOV");
        assert_eq!(ex.attempt_count, 1);
        assert!(ex.is_ok());
    }

    #[test]
    fn transient_failures_are_retried() {
        let mock = MockChatTransport::new(MockLlmFixture::constant("ok")).failing_first(2);
        let ex = complete(&prompt("hi"), &fast(), &mock);
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(ex.response_text, "ok");
    }

    #[test]
    fn exhausted_retries_are_recorded() {
        let mock = MockChatTransport::new(MockLlmFixture::constant("ok")).failing_first(10);
        let ex = complete(&prompt("hi"), &fast(), &mock);
        assert_eq!(ex.attempt_count, 3);
        assert!(ex.response_text.is_empty());
        assert!(ex.backend_error.unwrap().contains("503"));
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn mock_miss_is_not_retried() {
        let mock = MockChatTransport::new(MockLlmFixture::default());
        let ex = complete(&prompt("hi"), &fast(), &mock);
        assert_eq!(ex.attempt_count, 1);
        assert!(ex.backend_error.is_some());
    }

    #[test]
    fn requests_carry_default_temperature_and_one_user_message() {
        let mock = MockChatTransport::new(MockLlmFixture::constant("x"));
        complete(&prompt("the prompt"), &fast(), &mock);
        let req = &mock.captured()[0];
        assert_eq!(req.temperature, 0.2);
        assert_eq!(req.messages.len(), 1);
        assert_eq!(req.messages[0].role, "user");
        assert_eq!(req.messages[0].content, "the prompt");
        let json = serde_json::to_value(req).unwrap();
        assert_eq!(json["model"], "gpt-4o");
        assert_eq!(json["temperature"], 0.2);
    }

    #[test]
    fn fixture_lookup_order() {
        let mut fx = MockLlmFixture::constant("fallback");
        fx.by_hash.insert(prompt_hash("exact"), "by hash".into());
        fx.rules.push(MockRule {
            contains: vec!["word".into(), "order".into()],
            response: "by rule".into(),
        });
        assert_eq!(fx.lookup("exact"), Some("by hash"));
        assert_eq!(fx.lookup("the word order of X"), Some("by rule"));
        assert_eq!(fx.lookup("word only"), Some("fallback"));
    }

    #[test]
    fn temperature_bounds() {
        let bad = LlmBackend {
            temperature: 2.5,
            ..fast()
        };
        let mock = MockChatTransport::new(MockLlmFixture::constant("x"));
        let ex = complete(&prompt("hi"), &bad, &mock);
        assert!(ex.backend_error.unwrap().contains("temperature"));
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn response_decoding() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Conclusion: VSO"}}]}"#;
        assert_eq!(decode_chat_response(body).unwrap(), "Conclusion: VSO");
        assert_eq!(
            decode_chat_response(r#"{"choices":[]}"#),
            Err(LlmError::EmptyContent)
        );
        assert!(matches!(
            decode_chat_response("{}"),
            Err(LlmError::Decode(_))
        ));
    }

    #[test]
    fn backend_config_round_trips() {
        let b = LlmBackend::default();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<LlmBackend>(&json).unwrap(), b);
        let partial: LlmBackend = serde_json::from_str(r#"{"model_id":"m"}"#).unwrap();
        assert_eq!(partial.temperature, 0.2);
    }
}
