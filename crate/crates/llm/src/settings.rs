use serde::{Deserialize, Serialize};
use thiserror::Error;
use tpet_core::dsl::MutationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub kind: EngineKind,
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub temperature: f64,
    /// Extra attempts per request after a transport failure.
    pub retry_budget: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    /// Value of `n` in each request.
    pub candidates_per_request: usize,
    /// Edit parameters of the offline engine.
    pub mock: MutationParams,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            kind: EngineKind::Mock,
            endpoint: "http://localhost:8000/v1".into(),
            model: "local-model".into(),
            api_key_env: "TPET_API_KEY".into(),
            timeout_secs: 60,
            max_in_flight: 4,
            temperature: 0.8,
            retry_budget: 3,
            backoff_ms: 500,
            candidates_per_request: 5,
            mock: MutationParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid engine settings: {0}")]
    Settings(String),
    #[error("environment variable {0} with the API token is not set")]
    MissingToken(String),
}

impl EngineSettings {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Settings(m.into()));
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be > 0");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        if self.candidates_per_request == 0 {
            return bad("candidates_per_request must be >= 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and >= 0");
        }
        if self.kind == EngineKind::Remote && self.endpoint.trim().is_empty() {
            return bad("endpoint is required for the remote engine");
        }
        if !(self.mock.threshold_range.is_finite() && (0.0..=1.0).contains(&self.mock.starvation_bias)) {
            return bad("mock.threshold_range must be finite and mock.starvation_bias in [0, 1]");
        }
        Ok(())
    }

    /// Reads the token named by `api_key_env`.
    pub fn token(&self) -> Result<String, EngineError> {
        match std::env::var(&self.api_key_env) {
            Ok(t) if !t.is_empty() => Ok(t),
            _ => Err(EngineError::MissingToken(self.api_key_env.clone())),
        }
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}
