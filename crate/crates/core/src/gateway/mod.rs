//! One interface over language-model completion.
//!
//! Every model call in the pipeline goes through [`Gateway`], which validates
//! the request, dispatches to a [`Backend`] and keeps a log of the exchange.
//! Three backends exist: [`RemoteBackend`] (OpenAI-compatible HTTP),
//! [`MockBackend`] (scripted fixtures) and [`ReplayCache`] (record/replay
//! around any other backend).

mod cache;
mod mock;
mod remote;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheMode, CacheRecord, ReplayCache};
pub use mock::{FixtureFile, MockBackend, TagFixture};
pub use remote::{RemoteBackend, RemoteSettings, API_KEY_ENV};

pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture for {tag} request #{ordinal} (fingerprint {fingerprint})")]
    NoFixture { tag: Purpose, ordinal: u32, fingerprint: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("network error after {attempts} attempts: {message}")]
    NetworkError { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("replay cache miss for {0}")]
    CacheMiss(String),
    #[error("cache store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// What a request is for. Drives default temperature, model choice and
/// fixture lookup in the mock backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Synthesis,
    Judge,
    SkillEstimate,
    FocusExtract,
    Answer,
    Tiebreak,
    Fill,
    Paraphrase,
    Identify,
    Direct,
}

impl Purpose {
    pub const ALL: [Purpose; 10] = [
        Purpose::Synthesis,
        Purpose::Judge,
        Purpose::SkillEstimate,
        Purpose::FocusExtract,
        Purpose::Answer,
        Purpose::Tiebreak,
        Purpose::Fill,
        Purpose::Paraphrase,
        Purpose::Identify,
        Purpose::Direct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Purpose::Synthesis => "synthesis",
            Purpose::Judge => "judge",
            Purpose::SkillEstimate => "skill_estimate",
            Purpose::FocusExtract => "focus_extract",
            Purpose::Answer => "answer",
            Purpose::Tiebreak => "tiebreak",
            Purpose::Fill => "fill",
            Purpose::Paraphrase => "paraphrase",
            Purpose::Identify => "identify",
            Purpose::Direct => "direct",
        }
    }

    /// Generation steps that want diverse demos sample; scoring and
    /// extraction steps are greedy.
    pub fn default_temperature(self) -> f64 {
        match self {
            Purpose::Synthesis | Purpose::Fill | Purpose::Paraphrase => 0.7,
            _ => 0.0,
        }
    }

    pub fn uses_judge_model(self) -> bool {
        matches!(self, Purpose::Judge | Purpose::Tiebreak)
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub tag: Purpose,
    /// Caller-assigned position within a batch of same-purpose requests
    /// (demo attempt, pool index, path step). Not part of the fingerprint;
    /// used by the mock backend for tag-keyed fixtures.
    #[serde(default)]
    pub ordinal: u32,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, tag: Purpose, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            messages,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: tag.default_temperature(),
            tag,
            ordinal: 0,
        }
    }

    pub fn fingerprint(&self) -> RequestFingerprint {
        fingerprint(self)
    }

    /// Concatenated message contents, for token estimates.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub backend: String,
}

/// Hex SHA-256 over the canonical JSON of (model, messages, max_tokens,
/// temperature).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestFingerprint(pub String);

impl fmt::Display for RequestFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Serialize)]
struct FingerprintKey<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f64,
}

pub(crate) fn fingerprint_bytes(request: &CompletionRequest) -> Vec<u8> {
    serde_json::to_vec(&FingerprintKey {
        model: &request.model_id,
        messages: &request.messages,
        max_tokens: request.max_tokens,
        temperature: request.temperature,
    })
    .expect("fingerprint key serializes")
}

pub fn fingerprint(request: &CompletionRequest) -> RequestFingerprint {
    RequestFingerprint(hex::encode(Sha256::digest(fingerprint_bytes(request))))
}

/// Rough whitespace token count, used where a backend reports no usage.
pub fn approx_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub model: String,
    /// Model used for judging and tie-breaking; may differ from `model`.
    pub judge_model: String,
    pub max_tokens: u32,
    pub max_tokens_ceiling: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            model: "default".into(),
            judge_model: "default".into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            max_tokens_ceiling: DEFAULT_MAX_TOKENS,
        }
    }
}

/// One exchange as seen by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub fingerprint: RequestFingerprint,
    pub tag: Purpose,
    pub ordinal: u32,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    settings: GatewaySettings,
    log: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("settings", &self.settings)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_settings(backend, GatewaySettings::default())
    }

    pub fn with_settings(backend: Arc<dyn Backend>, settings: GatewaySettings) -> Self {
        Gateway { backend, settings, log: Mutex::new(Vec::new()) }
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Request with the configured model and per-purpose defaults.
    pub fn request(&self, tag: Purpose, ordinal: u32, messages: Vec<ChatMessage>) -> CompletionRequest {
        let model = if tag.uses_judge_model() { &self.settings.judge_model } else { &self.settings.model };
        let mut req = CompletionRequest::new(model.clone(), tag, messages);
        req.max_tokens = self.settings.max_tokens;
        req.ordinal = ordinal;
        req
    }

    fn validate(&self, request: &CompletionRequest) -> Result<(), GatewayError> {
        if request.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if request.max_tokens > self.settings.max_tokens_ceiling {
            return Err(GatewayError::InvalidRequest(format!(
                "max_tokens {} exceeds ceiling {}",
                request.max_tokens, self.settings.max_tokens_ceiling
            )));
        }
        if !(request.temperature >= 0.0 && request.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        if request.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if request
            .messages
            .iter()
            .any(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest("empty system/user message".into()));
        }
        Ok(())
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.validate(request)?;
        let result = self.backend.complete(request);
        let record = CallRecord {
            fingerprint: request.fingerprint(),
            tag: request.tag,
            ordinal: request.ordinal,
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            response: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(ToString::to_string),
        };
        self.log.lock().expect("gateway log poisoned").push(record);
        result
    }

    /// Builds the default request for `tag` and returns the response text.
    pub fn ask(&self, tag: Purpose, ordinal: u32, messages: Vec<ChatMessage>) -> Result<String, GatewayError> {
        self.complete(&self.request(tag, ordinal, messages)).map(|r| r.text)
    }

    /// Every call so far, sorted by (tag, ordinal, fingerprint) so the log is
    /// independent of scheduling.
    pub fn call_log(&self) -> Vec<CallRecord> {
        let mut log = self.log.lock().expect("gateway log poisoned").clone();
        log.sort_by(|a, b| {
            (a.tag, a.ordinal, &a.fingerprint, &a.messages.len())
                .cmp(&(b.tag, b.ordinal, &b.fingerprint, &b.messages.len()))
        });
        log
    }

    pub fn take_log(&self) -> Vec<CallRecord> {
        let log = self.call_log();
        self.log.lock().expect("gateway log poisoned").clear();
        log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> CompletionRequest {
        CompletionRequest::new(
            "m",
            Purpose::Answer,
            vec![ChatMessage::system("be brief"), ChatMessage::user("What is the capital of Japan?")],
        )
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(req().fingerprint(), req().fingerprint());
        assert_eq!(req().fingerprint().0.len(), 64);
        // ordinal and tag are metadata, not content
        let mut other = req();
        other.ordinal = 9;
        other.tag = Purpose::Judge;
        assert_eq!(other.fingerprint(), req().fingerprint());
    }

    #[test]
    fn fingerprint_is_order_sensitive() {
        let mut swapped = req();
        swapped.messages.swap(0, 1);
        assert_ne!(swapped.fingerprint(), req().fingerprint());
    }

    #[test]
    fn fingerprint_tracks_temperature() {
        let mut hot = req();
        hot.temperature = 0.7;
        assert_ne!(hot.fingerprint(), req().fingerprint());
        // recompute with an independent hash of the canonical JSON
        let canon = r#"{"model":"m","messages":[{"role":"system","content":"be brief"},{"role":"user","content":"What is the capital of Japan?"}],"max_tokens":4096,"temperature":0.7}"#;
        assert_eq!(hot.fingerprint().0, hex::encode(Sha256::digest(canon.as_bytes())));
        let canon_cold = canon.replace("0.7", "0.0");
        assert_eq!(req().fingerprint().0, hex::encode(Sha256::digest(canon_cold.as_bytes())));
    }

    #[test]
    fn default_temperatures() {
        assert_eq!(Purpose::Synthesis.default_temperature(), 0.7);
        for p in [Purpose::Judge, Purpose::Tiebreak, Purpose::SkillEstimate, Purpose::FocusExtract] {
            assert_eq!(p.default_temperature(), 0.0);
        }
        assert_eq!(req().max_tokens, 4096);
    }

    #[test]
    fn validation() {
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Answer, "ok")));
        let mut r = req();
        r.max_tokens = 0;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        r.max_tokens = 5000;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        let mut r = req();
        r.temperature = -1.0;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        let mut r = req();
        r.messages[1].content = "  ".into();
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        assert_eq!(gw.complete(&req()).unwrap().text, "ok");
    }

    #[test]
    fn judge_purposes_use_judge_model() {
        let settings = GatewaySettings { model: "answerer".into(), judge_model: "helper".into(), ..Default::default() };
        let gw = Gateway::with_settings(Arc::new(MockBackend::new()), settings);
        assert_eq!(gw.request(Purpose::Judge, 0, vec![]).model_id, "helper");
        assert_eq!(gw.request(Purpose::Tiebreak, 0, vec![]).model_id, "helper");
        assert_eq!(gw.request(Purpose::Answer, 0, vec![]).model_id, "answerer");
    }

    #[test]
    fn log_is_sorted_independent_of_call_order() {
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Judge, "Score: 5")));
        std::thread::scope(|s| {
            for i in (0..8).rev() {
                let gw = &gw;
                s.spawn(move || gw.ask(Purpose::Judge, i, vec![ChatMessage::user(format!("q{i}"))]).unwrap());
            }
        });
        let ords: Vec<u32> = gw.call_log().iter().map(|r| r.ordinal).collect();
        assert_eq!(ords, (0..8).collect::<Vec<_>>());
    }
}
