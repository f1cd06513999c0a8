use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tpet_core::evolution::{EngineStatus, MutationEngine, PromptState};
use tpet_llm::{EngineSettings, FixtureTransport, HttpRequest, HttpResponse, RemoteEngine, Transport, SYSTEM_PROMPT};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn prompt() -> PromptState {
    serde_json::from_str(&std::fs::read_to_string(fixture("prompt.json")).unwrap()).unwrap()
}

fn settings() -> EngineSettings {
    EngineSettings {
        model: "fixture-model".into(),
        temperature: 0.7,
        candidates_per_request: 4,
        backoff_ms: 1,
        ..EngineSettings::default()
    }
}

fn completion(contents: &[&str]) -> String {
    json!({
        "choices": contents
            .iter()
            .enumerate()
            .map(|(i, c)| json!({"index": i, "message": {"role": "assistant", "content": c}}))
            .collect::<Vec<_>>()
    })
    .to_string()
}

/// Answers from a script keyed by call number; records every request.
struct Scripted {
    calls: AtomicUsize,
    script: Box<dyn Fn(usize, &HttpRequest) -> Result<HttpResponse, String> + Send + Sync>,
    seen: Mutex<Vec<HttpRequest>>,
}

impl Scripted {
    fn new(f: impl Fn(usize, &HttpRequest) -> Result<HttpResponse, String> + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            calls: AtomicUsize::new(0),
            script: Box::new(f),
            seen: Mutex::new(Vec::new()),
        })
    }
}

impl Transport for Scripted {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        self.seen.lock().unwrap().push(request.clone());
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(k, request)
    }
}

fn ok(body: String) -> Result<HttpResponse, String> {
    Ok(HttpResponse { status: 200, body })
}

#[test]
fn recorded_exchange_is_extracted_byte_exactly() {
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(fixture("propose_expected.json")).unwrap()).unwrap();
    let transport = Arc::new(FixtureTransport::load(&fixture("propose_exchanges.json")).unwrap());
    let mut engine = RemoteEngine::with_transport(settings(), "token".into(), transport.clone());
    let n = expected["n"].as_u64().unwrap() as usize;
    let p = engine.propose(&prompt(), n);
    let texts: Vec<&str> = p.sources.iter().map(|s| s.text.as_str()).collect();
    let want: Vec<&str> = expected["sources"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(texts, want);
    assert_eq!(p.dropped as u64, expected["dropped"].as_u64().unwrap());
    assert_eq!(p.status, EngineStatus::Ok);
    assert_eq!(transport.requests().len(), 2);
    assert_eq!(transport.requests()[0]["n"], 4);
    assert_eq!(transport.requests()[1]["n"], 3);
}

#[test]
fn request_shape() {
    let t = Scripted::new(|_, _| ok(completion(&["```\nELSE 0\n```"])));
    let mut engine = RemoteEngine::with_transport(
        EngineSettings {
            endpoint: "https://llm.example/v1/".into(),
            ..settings()
        },
        "secret".into(),
        t.clone(),
    );
    let pr = prompt();
    engine.propose(&pr, 1);
    let seen = t.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].url, "https://llm.example/v1/chat/completions");
    assert_eq!(seen[0].bearer, "secret");
    assert_eq!(seen[0].timeout, Duration::from_secs(60));
    let body = &seen[0].body;
    assert_eq!(body["model"], "fixture-model");
    assert_eq!(body["n"], 1);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], SYSTEM_PROMPT);
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], pr.render());
}

#[test]
fn transient_failures_are_retried() {
    let t = Scripted::new(|k, _| match k {
        0 => Err("connection reset".into()),
        1 => Ok(HttpResponse {
            status: 503,
            body: String::new(),
        }),
        2 => Ok(HttpResponse {
            status: 429,
            body: String::new(),
        }),
        _ => ok(completion(&["```\nELSE 1\n```"])),
    });
    let mut engine = RemoteEngine::with_transport(settings(), "t".into(), t.clone());
    let p = engine.propose(&prompt(), 1);
    assert_eq!(p.status, EngineStatus::Ok);
    assert_eq!(p.sources.len(), 1);
    assert_eq!(p.sources[0].text, "ELSE 1");
    assert_eq!(t.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn exhausted_retries_report_engine_exhaustion() {
    let t = Scripted::new(|_, _| Err("timed out".into()));
    let s = EngineSettings {
        retry_budget: 2,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t.clone());
    let p = engine.propose(&prompt(), 6);
    assert!(p.sources.is_empty());
    assert!(matches!(p.status, EngineStatus::Exhausted { .. }));
    // Two requests of at most 4 candidates, three attempts each.
    assert_eq!(t.calls.load(Ordering::SeqCst), 6);
    assert_eq!(engine.diagnostics().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let t = Scripted::new(|_, _| {
        Ok(HttpResponse {
            status: 401,
            body: "{\"error\":\"bad key\"}".into(),
        })
    });
    let mut engine = RemoteEngine::with_transport(settings(), "t".into(), t.clone());
    let p = engine.propose(&prompt(), 2);
    assert!(matches!(p.status, EngineStatus::Exhausted { .. }));
    assert_eq!(t.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn partial_failure_keeps_surviving_candidates() {
    let t = Scripted::new(|_, req| {
        if req.body["n"] == 4 {
            Err("refused".into())
        } else {
            ok(completion(&["```\nELSE 2\n```", "no code here"]))
        }
    });
    let s = EngineSettings {
        retry_budget: 0,
        max_in_flight: 1,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t);
    let p = engine.propose(&prompt(), 6);
    assert_eq!(p.status, EngineStatus::Ok);
    assert_eq!(p.sources.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(), vec!["ELSE 2"]);
    assert_eq!(p.dropped, 1);
}

#[test]
fn malformed_bodies_are_dropped() {
    let t = Scripted::new(|k, _| match k {
        0 => ok("not json".into()),
        _ => ok("{\"choices\": []}".into()),
    });
    let s = EngineSettings {
        max_in_flight: 1,
        candidates_per_request: 1,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t.clone());
    let p = engine.propose(&prompt(), 2);
    assert_eq!(p.status, EngineStatus::Ok);
    assert!(p.sources.is_empty());
    assert_eq!(p.dropped, 2);
    assert_eq!(t.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn replies_keep_request_order_under_concurrency() {
    // Later requests answer sooner; output must still follow request order.
    let t = Scripted::new(|_, req| {
        let n = req.body["n"].as_u64().unwrap();
        std::thread::sleep(Duration::from_millis(10 * n));
        ok(completion(&[&format!("```\nELSE {}\n```", n - 1)]))
    });
    let s = EngineSettings {
        candidates_per_request: 3,
        max_in_flight: 3,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t);
    let p = engine.propose(&prompt(), 8);
    let texts: Vec<&str> = p.sources.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(texts, vec!["ELSE 2", "ELSE 2", "ELSE 1"]);
}

#[test]
fn bounded_in_flight_requests() {
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, pk) = (live.clone(), peak.clone());
    let t = Scripted::new(move |_, _| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(20));
        l.fetch_sub(1, Ordering::SeqCst);
        ok(completion(&["```\nELSE 0\n```"]))
    });
    let s = EngineSettings {
        candidates_per_request: 1,
        max_in_flight: 2,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t.clone());
    let p = engine.propose(&prompt(), 7);
    assert_eq!(p.sources.len(), 7);
    assert_eq!(t.calls.load(Ordering::SeqCst), 7);
    assert!(peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn refine_prompt_uses_fenced_reply_or_keeps_task() {
    let t = Scripted::new(|_, _| ok(completion(&["New task:\n```\nServe every phase within 120 s.\n```"])));
    let mut engine = RemoteEngine::with_transport(settings(), "t".into(), t);
    assert_eq!(engine.refine_prompt(&prompt()), "Serve every phase within 120 s.");

    let t = Scripted::new(|_, _| Err("down".into()));
    let s = EngineSettings {
        retry_budget: 0,
        ..settings()
    };
    let mut engine = RemoteEngine::with_transport(s, "t".into(), t);
    assert_eq!(engine.refine_prompt(&prompt()), prompt().task);
}

#[test]
fn missing_token_fails_construction() {
    let s = EngineSettings {
        api_key_env: "TPET_REMOTE_TEST_UNSET_TOKEN".into(),
        ..settings()
    };
    assert!(RemoteEngine::new(s).is_err());
}
