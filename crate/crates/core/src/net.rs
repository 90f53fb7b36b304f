//! Shared HTTP plumbing for remote providers: retry policy with exponential
//! backoff, transient-error classification, and bearer-token resolution.

use std::time::Duration;

use crate::error::{Error, Result};

/// Retry schedule for transient transport failures. Attempt `i` (0-based)
/// sleeps `base_delay_ms * 2^i` before retrying; permanent errors are
/// returned immediately.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Total attempts, including the first (minimum 1).
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 250 }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, provider: &str, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!(
                    "provider {provider}: transient failure, retrying in {delay} ms \
                     (attempt {} of {attempts})",
                    attempt + 1
                );
                std::thread::sleep(Duration::from_millis(delay));
            }
            match op() {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt + 1 < attempts => last_err = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(last_err.expect("loop ran at least once"))
    }
}

/// Maps a `ureq` failure onto the crate error model, marking timeouts,
/// connection trouble, and 429/5xx statuses as retryable.
pub fn classify_ureq(provider: &str, err: ureq::Error) -> Error {
    let (message, retryable) = match &err {
        ureq::Error::StatusCode(code) => {
            (format!("HTTP status {code}"), *code == 429 || (500..=599).contains(code))
        }
        ureq::Error::Timeout(_) => (err.to_string(), true),
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed => (err.to_string(), true),
        _ => (err.to_string(), false),
    };
    Error::Provider { provider: provider.to_string(), message, retryable }
}

/// Resolves a bearer token from the environment variable named in config.
/// Secrets never appear in config files themselves.
pub fn bearer_from_env(var: Option<&str>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => match std::env::var(name) {
            Ok(value) if !value.is_empty() => Ok(Some(format!("Bearer {value}"))),
            _ => Err(Error::Config(format!("environment variable `{name}` is not set"))),
        },
    }
}

pub fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into()
}
