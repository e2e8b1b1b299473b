//! Provider for OpenAI-compatible chat completion endpoints.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, ModelProfile, PromptRequest, Provider, ProviderError};

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Full URL of the chat completions endpoint.
    pub endpoint: String,
    /// Model name sent in the request body.
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            config,
            api_key,
            agent,
        })
    }
}

fn count(usage: &Value, key: &str, fallback: &str) -> u64 {
    usage
        .get(key)
        .and_then(Value::as_u64)
        .unwrap_or_else(|| fallback.len().div_ceil(4) as u64)
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(
        &self,
        request: &PromptRequest,
        profile: &ModelProfile,
    ) -> Result<Completion, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "temperature": profile.temperature,
            "messages": [{ "role": "user", "content": request.text }],
        });
        let started = Instant::now();
        let transport = |message: String| ProviderError::Transport {
            message,
            latency_secs: started.elapsed().as_secs_f64(),
        };
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let reply: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("status {status}: {e}")))?;
        if matches!(status, 401 | 403 | 404) {
            return Err(ProviderError::Config(format!("status {status}: {reply}")));
        }
        if !(200..300).contains(&status) {
            return Err(transport(format!("status {status}: {reply}")));
        }
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| transport("response has no message content".into()))?
            .to_string();
        let usage = &reply["usage"];
        Ok(Completion {
            input_tokens: count(usage, "prompt_tokens", &request.text),
            output_tokens: count(usage, "completion_tokens", &text),
            latency_secs: started.elapsed().as_secs_f64(),
            text,
        })
    }

    fn max_concurrency(&self) -> Option<usize> {
        self.config.max_concurrency
    }
}
