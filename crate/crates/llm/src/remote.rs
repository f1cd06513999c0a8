use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tpet_core::dsl::PolicySource;
use tpet_core::evolution::{EngineStatus, MutationEngine, PromptState, Proposal};

use crate::extract::extract_fenced_blocks;
use crate::settings::{EngineError, EngineSettings};

pub const SYSTEM_PROMPT: &str = "You write traffic signal control policies in a small rule language. \
Put every candidate policy in its own fenced code block and nothing else inside the fences.";

const REFINE_SYSTEM_PROMPT: &str = "You maintain the task description given to a policy designer. \
Reply with the revised task description inside one fenced code block.";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub bearer: String,
    pub body: Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One POST with a JSON body. `Err` means no HTTP response was obtained.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, String> {
        reqwest::blocking::Client::builder()
            .build()
            .map(|client| Self { client })
            .map_err(|e| e.to_string())
    }
}

impl Transport for ReqwestTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .post(&request.url)
            .timeout(request.timeout)
            .bearer_auth(&request.bearer)
            .json(&request.body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Recorded request body and the response it received. A string response
/// body is replayed verbatim, any other JSON value is serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureExchange {
    pub request: Value,
    pub status: u16,
    pub response: Value,
}

/// Replays recorded exchanges by exact request-body match.
pub struct FixtureTransport {
    exchanges: Vec<FixtureExchange>,
    seen: Mutex<Vec<Value>>,
}

impl FixtureTransport {
    pub fn new(exchanges: Vec<FixtureExchange>) -> Self {
        Self {
            exchanges,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let exchanges = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::new(exchanges))
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.seen.lock().map(|v| v.clone()).unwrap_or_default()
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        if let Ok(mut seen) = self.seen.lock() {
            seen.push(request.body.clone());
        }
        let ex = self
            .exchanges
            .iter()
            .find(|e| e.request == request.body)
            .ok_or_else(|| "no recorded exchange matches the request".to_string())?;
        let body = match &ex.response {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        Ok(HttpResponse {
            status: ex.status,
            body,
        })
    }
}

enum Reply {
    Contents(Vec<String>),
    /// Server answered but the body was unusable; not retried.
    Malformed(String),
    /// Retries exhausted or a non-retryable status.
    Failed(String),
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct RemoteEngine {
    settings: EngineSettings,
    token: String,
    transport: Arc<dyn Transport>,
    log: Vec<String>,
}

impl RemoteEngine {
    /// HTTP engine; the token is read from `settings.api_key_env` now.
    pub fn new(settings: EngineSettings) -> Result<Self, EngineError> {
        settings.validate()?;
        let token = settings.token()?;
        let transport = ReqwestTransport::new().map_err(EngineError::Settings)?;
        Ok(Self::with_transport(settings, token, Arc::new(transport)))
    }

    pub fn with_transport(settings: EngineSettings, token: String, transport: Arc<dyn Transport>) -> Self {
        Self {
            settings,
            token,
            transport,
            log: Vec::new(),
        }
    }

    /// Transport errors, malformed replies and dropped responses so far.
    pub fn diagnostics(&self) -> &[String] {
        &self.log
    }

    pub fn request_body(&self, system: &str, user: &str, n: usize) -> Value {
        json!({
            "model": self.settings.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.settings.temperature,
            "n": n,
        })
    }

    fn call(&self, body: Value) -> Reply {
        let req = HttpRequest {
            url: self.settings.url(),
            bearer: self.token.clone(),
            body,
            timeout: Duration::from_secs(self.settings.timeout_secs),
        };
        let mut last = String::new();
        for attempt in 0..=self.settings.retry_budget {
            if attempt > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                std::thread::sleep(Duration::from_millis(self.settings.backoff_ms.saturating_mul(factor)));
            }
            match self.transport.send(&req) {
                Ok(r) if (200..300).contains(&r.status) => return parse_choices(&r.body),
                Ok(r) if r.status == 429 || r.status >= 500 => last = format!("HTTP {}", r.status),
                Ok(r) => return Reply::Failed(format!("HTTP {}: {}", r.status, snippet(&r.body))),
                Err(e) => last = e,
            }
        }
        Reply::Failed(format!("{last} after {} attempts", self.settings.retry_budget + 1))
    }

    fn call_all(&self, bodies: Vec<Value>) -> Vec<Reply> {
        let mut out = Vec::with_capacity(bodies.len());
        let mut bodies = bodies.into_iter().peekable();
        while bodies.peek().is_some() {
            let batch: Vec<Value> = bodies.by_ref().take(self.settings.max_in_flight).collect();
            let replies: Vec<Reply> = std::thread::scope(|s| {
                let handles: Vec<_> = batch.into_iter().map(|b| s.spawn(move || self.call(b))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Reply::Failed("request thread panicked".into())))
                    .collect()
            });
            out.extend(replies);
        }
        out
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

fn parse_choices(body: &str) -> Reply {
    let v: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return Reply::Malformed(format!("response is not JSON: {e}")),
    };
    let Some(choices) = v.get("choices").and_then(Value::as_array) else {
        return Reply::Malformed("response has no choices array".into());
    };
    let contents = choices
        .iter()
        .filter_map(|c| c.pointer("/message/content").and_then(Value::as_str))
        .map(str::to_string)
        .collect::<Vec<_>>();
    if contents.is_empty() {
        Reply::Malformed("no choice carries message content".into())
    } else {
        Reply::Contents(contents)
    }
}

impl MutationEngine for RemoteEngine {
    fn propose(&mut self, prompt: &PromptState, n: usize) -> Proposal {
        if n == 0 {
            return Proposal::ok(Vec::new());
        }
        let user = prompt.render();
        let per = self.settings.candidates_per_request;
        let bodies: Vec<Value> = (0..n.div_ceil(per))
            .map(|k| self.request_body(SYSTEM_PROMPT, &user, per.min(n - k * per)))
            .collect();
        let replies = self.call_all(bodies);

        let mut sources = Vec::new();
        let mut dropped = 0;
        let mut failures = Vec::new();
        let total = replies.len();
        for (k, reply) in replies.into_iter().enumerate() {
            match reply {
                Reply::Contents(contents) => {
                    for c in contents {
                        let blocks = extract_fenced_blocks(&c);
                        if blocks.is_empty() {
                            dropped += 1;
                            self.log.push(format!("request {k}: response without a fenced block dropped"));
                        }
                        sources.extend(blocks.into_iter().map(PolicySource::new));
                    }
                }
                Reply::Malformed(e) => {
                    dropped += 1;
                    self.log.push(format!("request {k}: {e}"));
                }
                Reply::Failed(e) => {
                    self.log.push(format!("request {k}: {e}"));
                    failures.push(e);
                }
            }
        }
        sources.truncate(n);
        let status = if failures.len() == total {
            EngineStatus::Exhausted {
                reason: format!("all {total} requests failed; last error: {}", failures[total - 1]),
            }
        } else {
            EngineStatus::Ok
        };
        Proposal {
            sources,
            dropped,
            status,
        }
    }

    fn refine_prompt(&mut self, prompt: &PromptState) -> String {
        let user = format!(
            "{}\nRewrite the TASK section so that the next round of designers avoids the defects reported above.",
            prompt.render()
        );
        let body = self.request_body(REFINE_SYSTEM_PROMPT, &user, 1);
        match self.call(body) {
            Reply::Contents(c) => {
                let text = &c[0];
                let refined = extract_fenced_blocks(text)
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| text.trim().to_string());
                if refined.trim().is_empty() {
                    prompt.task.clone()
                } else {
                    refined
                }
            }
            Reply::Malformed(e) | Reply::Failed(e) => {
                self.log.push(format!("task refinement kept the previous task: {e}"));
                prompt.task.clone()
            }
        }
    }
}
