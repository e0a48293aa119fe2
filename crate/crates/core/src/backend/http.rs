//! Chat-completions HTTP backend with declared-tool calling.
//!
//! The wire transport sits behind [`Transport`] so that retry, backoff and
//! error classification are testable without a network.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{usage_from_payload, Backend, BackendConfig, BackendError, Invocation};
use crate::elicitation::StageRequest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Io(String),
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportFailure>;
}

/// Blocking transport over `ureq`. Non-2xx statuses are returned, not raised.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        UreqTransport { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportFailure> {
        let mut request = self.agent.post(url).config().timeout_global(Some(timeout)).build();
        for (name, value) in headers {
            request = request.header(name, value);
        }
        match request.send_json(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                let body = response.body_mut().read_to_string().map_err(|e| classify_ureq(&e))?;
                Ok(TransportResponse { status, body })
            }
            Err(e) => Err(classify_ureq(&e)),
        }
    }
}

fn classify_ureq(e: &ureq::Error) -> TransportFailure {
    match e {
        ureq::Error::Timeout(_) => TransportFailure::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportFailure::Timeout,
        other => TransportFailure::Io(other.to_string()),
    }
}

/// Sink for verbatim request/response exchanges, one JSON object per line.
pub type DebugSink = Arc<Mutex<dyn Write + Send>>;

pub struct HttpBackend<T: Transport = UreqTransport> {
    config: BackendConfig,
    api_key: String,
    transport: T,
    debug: Option<DebugSink>,
    sleep: fn(Duration),
}

impl HttpBackend<UreqTransport> {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: BackendConfig) -> Result<Self, BackendError> {
        Self::with_transport(config, UreqTransport::new(), |name| std::env::var(name).ok())
    }
}

impl<T: Transport> HttpBackend<T> {
    /// `lookup` resolves environment variable names; a missing or empty key
    /// fails before any network activity.
    pub fn with_transport(
        config: BackendConfig,
        transport: T,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = lookup(&config.api_key_env)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::AuthMissing(config.api_key_env.clone()))?;
        Ok(HttpBackend { config, api_key, transport, debug: None, sleep: std::thread::sleep })
    }

    pub fn with_debug(mut self, sink: DebugSink) -> Self {
        self.debug = Some(sink);
        self
    }

    /// Replace the backoff sleep, e.g. with a no-op in tests.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn log_exchange(
        &self,
        request: &StageRequest,
        body: &Value,
        outcome: &Result<TransportResponse, TransportFailure>,
    ) {
        let Some(sink) = &self.debug else { return };
        let response = match outcome {
            Ok(r) => json!({"status": r.status, "body": r.body}),
            Err(TransportFailure::Timeout) => json!({"error": "timeout"}),
            Err(TransportFailure::Io(e)) => json!({"error": e}),
        };
        let record = json!({
            "debug": {
                "problem_id": request.meta.problem_id,
                "stage": request.stage,
                "attempt": request.meta.attempt,
                "request": body,
                "response": response,
            }
        });
        let line = record.to_string().replace(&self.api_key, "[REDACTED]");
        if let Ok(mut w) = sink.lock() {
            let _ = writeln!(w, "{line}");
        }
    }
}

/// Chat-completions request body forcing a call to the stage's tool.
pub fn request_body(request: &StageRequest, config: &BackendConfig) -> Value {
    let user_content = match &request.attachment {
        None => json!(request.user_prompt),
        Some(att) => json!([
            {"type": "text", "text": request.user_prompt},
            {"type": "image_url", "image_url": {"url": format!("data:{};base64,{}", att.media_type, att.to_base64())}},
        ]),
    };
    json!({
        "model": config.model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": user_content},
        ],
        "tools": [request.tool_schema.to_json()],
        "tool_choice": {"type": "function", "function": {"name": request.tool_schema.name}},
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    })
}

enum Failure {
    Timeout,
    RateLimited,
    Transport(String),
}

impl<T: Transport> Backend for HttpBackend<T> {
    fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
        let body = request_body(request, &self.config);
        let headers = vec![
            ("Authorization".to_string(), format!("Bearer {}", self.api_key)),
            ("Content-Type".to_string(), "application/json".to_string()),
        ];
        let tries = self.config.max_retries + 1;
        let mut last = Failure::Transport("no attempt made".into());
        for attempt in 0..tries {
            if attempt > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                (self.sleep)(Duration::from_millis(self.config.backoff_ms.saturating_mul(factor)));
            }
            let outcome = self.transport.post_json(&self.config.endpoint, &headers, &body, self.config.timeout());
            self.log_exchange(request, &body, &outcome);
            last = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let payload: Value = serde_json::from_str(&resp.body)
                        .map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
                    let usage = usage_from_payload(&payload);
                    return Ok(Invocation { payload, usage });
                }
                Ok(resp) if resp.status == 429 => Failure::RateLimited,
                Ok(resp) if resp.status == 408 || resp.status >= 500 => {
                    Failure::Transport(format!("HTTP {}", resp.status))
                }
                Ok(resp) => return Err(BackendError::Transport(format!("HTTP {}: {}", resp.status, resp.body))),
                Err(TransportFailure::Timeout) => Failure::Timeout,
                Err(TransportFailure::Io(e)) => Failure::Transport(e),
            };
        }
        Err(match last {
            Failure::Timeout => BackendError::Timeout { attempts: tries },
            Failure::RateLimited => BackendError::RateLimited { attempts: tries },
            Failure::Transport(e) => BackendError::Transport(e),
        })
    }
}
