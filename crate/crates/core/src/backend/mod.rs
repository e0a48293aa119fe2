//! Uniform invocation layer over stage requests.
//!
//! A [`Backend`] turns a [`StageRequest`] into the provider's raw response
//! payload plus token usage. Parsing the payload is left to the caller so
//! that elicitation retries and transport retries stay separately budgeted.

pub mod http;
pub mod sim;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::elicitation::StageRequest;
use crate::types::TokenUsage;

pub use http::{DebugSink, HttpBackend, Transport, TransportFailure, TransportResponse, UreqTransport};
pub use sim::{Latent, SimBackend, SimulatorSpec};

/// Raw provider payload and its token accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub payload: Value,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

pub trait Backend: Send + Sync {
    fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
        (**self).invoke(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
        (**self).invoke(request)
    }
}

/// The solver and the verifier-role judge used for selection. Both default
/// to the same backend; each stage call is a fresh conversation.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub solver: &'a dyn Backend,
    pub judge: &'a dyn Backend,
}

impl<'a> Agents<'a> {
    pub fn same(backend: &'a dyn Backend) -> Self {
        Agents { solver: backend, judge: backend }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles after every failed try.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_max_tokens() -> u32 {
    4096
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::InvalidConfig("endpoint is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(BackendError::InvalidConfig("timeout must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidConfig("temperature must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Price per token. No provider prices are built in.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingTable {
    pub per_input_token: f64,
    pub per_output_token: f64,
}

impl PricingTable {
    pub fn new(per_input_token: f64, per_output_token: f64) -> Result<Self, BackendError> {
        if !(per_input_token >= 0.0 && per_output_token >= 0.0)
            || !per_input_token.is_finite()
            || !per_output_token.is_finite()
        {
            return Err(BackendError::InvalidConfig("prices must be finite and nonnegative".into()));
        }
        Ok(PricingTable { per_input_token, per_output_token })
    }
}

pub fn usage_cost(usage: TokenUsage, pricing: &PricingTable) -> f64 {
    usage.input_tokens as f64 * pricing.per_input_token + usage.output_tokens as f64 * pricing.per_output_token
}

/// Token usage from a provider payload. Accepts both the
/// `prompt_tokens`/`completion_tokens` and `input_tokens`/`output_tokens`
/// spellings; missing counts read as zero.
pub fn usage_from_payload(payload: &Value) -> TokenUsage {
    let usage = &payload["usage"];
    let count = |names: [&str; 2]| names.iter().find_map(|n| usage[*n].as_u64()).unwrap_or(0);
    TokenUsage::new(count(["prompt_tokens", "input_tokens"]), count(["completion_tokens", "output_tokens"]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn cost_examples() {
        let pricing = PricingTable::new(0.001, 0.002).unwrap();
        assert_eq!(usage_cost(TokenUsage::new(0, 0), &pricing), 0.0);
        assert!((usage_cost(TokenUsage::new(1000, 1000), &pricing) - 3.0).abs() < 1e-12);
        assert!(PricingTable::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn usage_spellings() {
        assert_eq!(
            usage_from_payload(&json!({"usage": {"prompt_tokens": 5, "completion_tokens": 7}})),
            TokenUsage::new(5, 7)
        );
        assert_eq!(
            usage_from_payload(&json!({"usage": {"input_tokens": 2, "output_tokens": 3}})),
            TokenUsage::new(2, 3)
        );
        assert_eq!(usage_from_payload(&json!({})), TokenUsage::default());
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::new("https://example.invalid/v1/chat/completions", "m");
        assert!(cfg.validate().is_ok());
        cfg.timeout_secs = 0.0;
        assert!(cfg.validate().is_err());
        cfg = BackendConfig::new("  ", "m");
        assert!(cfg.validate().is_err());
    }
}
