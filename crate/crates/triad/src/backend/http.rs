//! Chat-completions client for serving real models behind the loop.
//!
//! Speaks the common `POST {base_url}/chat/completions` shape. Generation
//! is the only remote operation; weight updates happen in whatever trainer
//! owns the served model, so [`Backend::apply_update`] here only tallies
//! the batch and reports `applied = false`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, UpdateBatch, UpdateReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in config files or snapshots.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            max_retries: 3,
            retry_base_ms: 200,
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.base_url.is_empty() {
            return Err(BackendError::Fatal("base_url must not be empty".into()));
        }
        let api_key = match &config.api_key_env {
            Some(name) => Some(std::env::var(name).map_err(|_| {
                BackendError::Fatal(format!("environment variable {name} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn request_body(&self, request: &GenerationRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_new_units,
        });
        if let Some(seed) = request.rng_seed {
            body["seed"] = serde_json::json!(seed);
        }
        body
    }

    /// One attempt; `Err(retryable, message)` feeds the retry loop.
    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| (true, format!("send: {e}")))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, format!("status {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err((false, format!("status {status}: {text}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| (true, format!("decode: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or((true, "response had no choices".into()))
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
    content: String,
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = self.request_body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err((false, message)) => return Err(BackendError::Fatal(message)),
                Err((true, message)) => {
                    if attempts > self.config.max_retries {
                        return Err(BackendError::Transport { attempts, message });
                    }
                    let backoff = self.config.retry_base_ms << (attempts - 1).min(8);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        batch.validate()?;
        Ok(UpdateReport::tally(batch, false))
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}
