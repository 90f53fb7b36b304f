//! HTTP chat provider (OpenAI-style chat completions).
//!
//! Request:  `POST <url>` with
//! `{"model", "messages": [{"role": "system"|"user", "content"}], "temperature", "max_tokens"}`.
//! Response: `{"choices": [{"message": {"content": "..."}}]}` (extra fields
//! ignored). Transient transport failures (timeouts, connection errors,
//! HTTP 429/5xx) are retried with exponential backoff per the configured
//! policy.

use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, ChatRequest};
use crate::error::{Error, Result};
use crate::net::{agent, bearer_from_env, classify_ureq, RetryPolicy};

#[derive(Debug, Clone)]
pub struct HttpChatProviderConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

pub struct HttpChatProvider {
    config: HttpChatProviderConfig,
    bearer: Option<String>,
    agent: ureq::Agent,
    name: String,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: String,
}

impl HttpChatProvider {
    pub fn new(config: HttpChatProviderConfig) -> Result<Self> {
        let bearer = bearer_from_env(config.api_key_env.as_deref())?;
        let agent = agent(config.timeout_secs);
        let name = format!("http-{}", config.model);
        Ok(HttpChatProvider { config, bearer, agent, name })
    }

    fn call(&self, request: &ChatRequest) -> Result<String> {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let payload = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        let mut http_request = self.agent.post(&self.config.url);
        if let Some(bearer) = &self.bearer {
            http_request = http_request.header("Authorization", bearer);
        }
        let mut response =
            http_request.send_json(&payload).map_err(|e| classify_ureq(&self.name, e))?;
        let parsed: ApiResponse =
            response.body_mut().read_json().map_err(|e| classify_ureq(&self.name, e))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|choice| choice.message.content)
            .ok_or_else(|| Error::Provider {
                provider: self.name.clone(),
                message: "response contained no choices".into(),
                retryable: false,
            })
    }
}

impl ChatProvider for HttpChatProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.config.retry.run(&self.name, || self.call(request))
    }
}
