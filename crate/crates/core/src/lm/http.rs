use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LanguageModel, LmError, LmRequest, LmResponse};

pub const API_KEY_ENV: &str = "MEDMSA_LM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base of an OpenAI-compatible API, e.g. `https://api.together.xyz/v1`.
    pub base_url: String,
    pub model_name: String,
    #[serde(with = "crate::serde_util::duration_secs")]
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.together.xyz/v1".into(),
            model_name: "meta-llama/Llama-3.3-70B-Instruct-Turbo".into(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Chat-completions client. The API key is read from `MEDMSA_LM_API_KEY`
/// when the backend is built.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LmError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpConfig, api_key: Option<String>) -> Result<Self, LmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LmError::BackendUnavailable {
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl LanguageModel for HttpBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.draw,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        let mut call = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let started = Instant::now();
        let response = call.send().map_err(|e| LmError::BackendUnavailable {
            message: e.to_string(),
        })?;
        let status = response.status();
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            let retry_after = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse().ok());
            return Err(LmError::RateLimited { retry_after });
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(LmError::BackendUnavailable {
                message: format!("HTTP {status}: {snippet}"),
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| LmError::BackendUnavailable {
            message: format!("malformed completion response: {e}"),
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.is_empty() {
            return Err(LmError::EmptyCompletion);
        }
        Ok(LmResponse {
            text,
            backend_id: self.id(),
            latency: started.elapsed().as_secs_f64(),
            fixture_key: None,
        })
    }

    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }
}
