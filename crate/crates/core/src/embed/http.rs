//! HTTP embedding provider.
//!
//! Request:  `POST <url>` with `{"model": "...", "input": ["...", ...]}`.
//! Response: `{"data": [{"index": 0, "embedding": [...]}, ...]}` (extra
//! fields ignored). Results are reassembled by `index`, so out-of-order
//! responses are fine; missing or duplicate indexes are an error.

use serde::Deserialize;
use serde_json::json;

use super::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::net::{agent, bearer_from_env, classify_ureq, RetryPolicy};

#[derive(Debug, Clone)]
pub struct HttpEmbedderConfig {
    pub url: String,
    pub model: String,
    /// Output dimension the endpoint is expected to produce.
    pub dim: usize,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    bearer: Option<String>,
    agent: ureq::Agent,
    name: String,
}

#[derive(Deserialize)]
struct ApiResponse {
    data: Vec<ApiVector>,
}

#[derive(Deserialize)]
struct ApiVector {
    index: usize,
    embedding: Embedding,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self> {
        let bearer = bearer_from_env(config.api_key_env.as_deref())?;
        let agent = agent(config.timeout_secs);
        let name = format!("http-{}", config.model);
        Ok(HttpEmbedder { config, bearer, agent, name })
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let payload = json!({ "model": self.config.model, "input": texts });
        let mut request = self.agent.post(&self.config.url);
        if let Some(bearer) = &self.bearer {
            request = request.header("Authorization", bearer);
        }
        let mut response =
            request.send_json(&payload).map_err(|e| classify_ureq(&self.name, e))?;
        let parsed: ApiResponse =
            response.body_mut().read_json().map_err(|e| classify_ureq(&self.name, e))?;

        let mut ordered: Vec<Option<Embedding>> = vec![None; texts.len()];
        for item in parsed.data {
            let slot = ordered.get_mut(item.index).ok_or_else(|| Error::Provider {
                provider: self.name.clone(),
                message: format!("response index {} out of range for {} inputs", item.index, texts.len()),
                retryable: false,
            })?;
            if slot.replace(item.embedding).is_some() {
                return Err(Error::Provider {
                    provider: self.name.clone(),
                    message: format!("duplicate response index {}", item.index),
                    retryable: false,
                });
            }
        }
        ordered
            .into_iter()
            .enumerate()
            .map(|(idx, slot)| {
                slot.ok_or_else(|| Error::Provider {
                    provider: self.name.clone(),
                    message: format!("response missing vector for index {idx}"),
                    retryable: false,
                })
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        self.config.retry.run(&self.name, || self.call(texts))
    }
}
