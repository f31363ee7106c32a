use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible chat-completions endpoint.
    RemoteChat,
    /// Offline oracle: label of the cosine-nearest support image.
    MockNearestSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Never the key.
    pub api_key_env: String,
    pub temperature: f64,
    /// Audit flag required for any temperature other than zero.
    pub allow_nonzero_temperature: bool,
    pub max_retries: u32,
    /// Zero disables the cap.
    pub requests_per_minute: u32,
    pub timeout_s: f64,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Zero omits `max_tokens` from the request.
    pub max_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockNearestSupport,
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "mock-nearest-support".into(),
            api_key_env: "RAICL_API_KEY".into(),
            temperature: 0.0,
            allow_nonzero_temperature: false,
            max_retries: 5,
            requests_per_minute: 60,
            timeout_s: 120.0,
            backoff_base_ms: 1000,
            backoff_max_ms: 60_000,
            max_tokens: 0,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_owned()));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        if self.temperature != 0.0 && !self.allow_nonzero_temperature {
            return bad("temperature must be 0 unless allow_nonzero_temperature is set");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        if self.kind == BackendKind::RemoteChat {
            if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
                return bad("remote_chat needs an endpoint and a model");
            }
            if self.api_key_env.trim().is_empty() {
                return bad("remote_chat needs api_key_env");
            }
        }
        Ok(())
    }

    pub fn backend_id(&self) -> String {
        match self.kind {
            BackendKind::RemoteChat => format!("remote_chat:{}", self.model),
            BackendKind::MockNearestSupport => "mock_nearest_support".into(),
        }
    }
}
