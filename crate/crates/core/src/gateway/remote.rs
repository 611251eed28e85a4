use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{approx_tokens, Backend, ChatMessage, CompletionRequest, CompletionResponse, GatewayError};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "FREM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    /// Base URL up to and including the version segment, e.g.
    /// `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        RemoteSettings {
            base_url: "https://api.openai.com/v1".into(),
            max_retries: 3,
            initial_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// OpenAI-compatible chat-completions client with bounded exponential
/// backoff on 429, 5xx and transport failures.
pub struct RemoteBackend {
    settings: RemoteSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

enum Attempt {
    Done(Result<CompletionResponse, GatewayError>),
    Retry { rate_limited: bool, message: String },
}

impl RemoteBackend {
    /// Reads the API key from `FREM_API_KEY` when present.
    pub fn new(settings: RemoteSettings) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, api_key)
    }

    pub fn with_key(settings: RemoteSettings, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .build();
        RemoteBackend { settings, api_key, agent: ureq::Agent::new_with_config(config) }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Attempt {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
        };
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry { rate_limited: false, message: e.to_string() },
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry { rate_limited: false, message: e.to_string() },
        };
        match status {
            200..=299 => Attempt::Done(decode(&text)),
            429 => Attempt::Retry { rate_limited: true, message: "http 429".into() },
            500..=599 => Attempt::Retry { rate_limited: false, message: format!("http {status}") },
            _ => Attempt::Done(Err(GatewayError::NetworkError {
                attempts: 1,
                message: format!("http {status}: {}", text.chars().take(200).collect::<String>()),
            })),
        }
    }
}

fn decode(body: &str) -> Result<CompletionResponse, GatewayError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let text = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::MalformedResponse("no choices[0].message.content".into()))?;
    let (prompt_tokens, completion_tokens) = match wire.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens),
        None => (0, approx_tokens(&text)),
    };
    Ok(CompletionResponse { text, prompt_tokens, completion_tokens, backend: "remote".into() })
}

impl Backend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let max_attempts = self.settings.max_retries + 1;
        let mut backoff = Duration::from_millis(self.settings.initial_backoff_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Attempt::Done(result) => return result,
                Attempt::Retry { rate_limited, message } => {
                    if attempts >= max_attempts {
                        return Err(if rate_limited {
                            GatewayError::RateLimited { attempts }
                        } else {
                            GatewayError::NetworkError { attempts, message }
                        });
                    }
                    log::debug!("{} attempt {attempts} failed: {message}; retrying", request.tag);
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
