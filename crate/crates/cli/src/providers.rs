//! Builds embedding and chat providers from the run configuration.

use anyhow::{anyhow, Context, Result};

use ragsel_core::embed::{
    CachedEmbedder, EmbeddingProvider, HashedNgramEmbedder, HttpEmbedder, HttpEmbedderConfig,
};
use ragsel_core::llm::{ChatProvider, HttpChatProvider, HttpChatProviderConfig, ScriptedChatProvider};
use ragsel_core::RetryPolicy;

use crate::config::{ChatConfig, ChatKind, EmbedderConfig, EmbedderKind, RunConfig};

/// Embedding provider per the config, wrapped in the on-disk cache when a
/// cache directory is configured.
pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match (cfg.provider, &cfg.cache_dir) {
        (EmbedderKind::Mock, None) => Ok(Box::new(HashedNgramEmbedder::new(cfg.dim, cfg.ngram))),
        (EmbedderKind::Mock, Some(dir)) => Ok(Box::new(CachedEmbedder::new(
            HashedNgramEmbedder::new(cfg.dim, cfg.ngram),
            dir,
        ))),
        (EmbedderKind::Http, cache) => {
            let inner = HttpEmbedder::new(http_embedder_config(cfg))
                .context("cannot construct the HTTP embedder")?;
            match cache {
                None => Ok(Box::new(inner)),
                Some(dir) => Ok(Box::new(CachedEmbedder::new(inner, dir))),
            }
        }
    }
}

fn http_embedder_config(cfg: &EmbedderConfig) -> HttpEmbedderConfig {
    HttpEmbedderConfig {
        // Validated before any provider is built.
        url: cfg.url.clone().expect("validated: embedder.url is set"),
        model: cfg.model.clone().expect("validated: embedder.model is set"),
        dim: cfg.dim,
        api_key_env: cfg.api_key_env.clone(),
        timeout_secs: cfg.timeout_secs,
        retry: RetryPolicy {
            max_attempts: cfg.max_attempts,
            base_delay_ms: cfg.retry_base_delay_ms,
        },
    }
}

/// Chat provider per the config.
pub fn build_chat(cfg: &ChatConfig) -> Result<Box<dyn ChatProvider>> {
    match cfg.provider {
        ChatKind::Scripted => {
            let script = cfg.script.as_ref().ok_or_else(|| {
                anyhow!(
                    "this command needs the chat model, but chat.script is unset \
                     (required when chat.provider is \"scripted\")"
                )
            })?;
            let provider = ScriptedChatProvider::from_file(script).with_context(|| {
                format!("cannot load the chat script {}", script.display())
            })?;
            Ok(Box::new(provider))
        }
        ChatKind::Http => {
            let provider = HttpChatProvider::new(HttpChatProviderConfig {
                url: cfg.url.clone().expect("validated: chat.url is set"),
                model: cfg.model.clone().expect("validated: chat.model is set"),
                api_key_env: cfg.api_key_env.clone(),
                timeout_secs: cfg.timeout_secs,
                retry: RetryPolicy {
                    max_attempts: cfg.max_attempts,
                    base_delay_ms: cfg.retry_base_delay_ms,
                },
            })
            .context("cannot construct the HTTP chat provider")?;
            Ok(Box::new(provider))
        }
    }
}

/// Both providers at once, for commands that need them together.
pub fn build_providers(
    config: &RunConfig,
) -> Result<(Box<dyn ChatProvider>, Box<dyn EmbeddingProvider>)> {
    Ok((build_chat(&config.chat)?, build_embedder(&config.embedder)?))
}
