//! LLM dispatch with deterministic record/replay.
//!
//! Requests are keyed by a content hash of (prompt, temperature, model
//! tag). Cassettes map hashes to recorded responses so test and
//! evaluation runs never need network access.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::PromptInstance;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay miss for {target}: request hash {hash} not in cassette")]
    ReplayMiss { target: String, hash: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("quota exhausted (HTTP 429): {0}")]
    Quota(String),
    #[error("cassette format error at line {line}: {msg}")]
    CassetteFormat { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub prompt_text: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub model_tag: String,
}

impl LlmRequest {
    pub fn new(prompt_text: &str, temperature: f64, max_tokens: usize, model_tag: &str) -> Self {
        LlmRequest {
            prompt_text: prompt_text.to_string(),
            temperature,
            max_tokens,
            model_tag: model_tag.to_string(),
        }
    }

    /// Content hash of (prompt, temperature, model tag) — max tokens is a
    /// transport limit, not part of the request identity.
    pub fn request_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.prompt_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(format!("{:.6}", self.temperature).as_bytes());
        hasher.update([0u8]);
        hasher.update(self.model_tag.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeSource {
    Live,
    Replay,
}

#[derive(Debug, Clone)]
pub struct LlmExchange {
    pub request: LlmRequest,
    pub response_text: String,
    pub latency_ms: u64,
    pub source: ExchangeSource,
}

#[derive(Debug, Default)]
pub struct Cassette {
    pub entries: BTreeMap<String, String>,
    pub model_tag: Option<String>,
    pub capture_date: Option<String>,
}

impl Cassette {
    /// Parse the line format: `# key: value` metadata, then one
    /// `hash<TAB>base64(response)` record per line.
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut cassette = Cassette::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once(':') {
                    match key.trim() {
                        "model" => cassette.model_tag = Some(value.trim().to_string()),
                        "captured" => cassette.capture_date = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            let (hash, payload) = line.split_once('\t').ok_or(GatewayError::CassetteFormat {
                line: lineno + 1,
                msg: "expected hash<TAB>base64".into(),
            })?;
            let response = b64
                .decode(payload)
                .ok()
                .and_then(|b| String::from_utf8(b).ok())
                .ok_or(GatewayError::CassetteFormat {
                    line: lineno + 1,
                    msg: "invalid base64 payload".into(),
                })?;
            cassette.entries.insert(hash.to_string(), response);
        }
        Ok(cassette)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GatewayError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut out = String::new();
        if let Some(model) = &self.model_tag {
            let _ = writeln!(out, "# model: {model}");
        }
        if let Some(date) = &self.capture_date {
            let _ = writeln!(out, "# captured: {date}");
        }
        for (hash, response) in &self.entries {
            let _ = writeln!(out, "{hash}\t{}", b64.encode(response));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GatewayError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A backend that can answer one request.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, GatewayError>;
}

/// Chat-completion endpoint speaking the common JSON wire format. The
/// credential comes from the environment at construction and is never
/// written to cassettes or error text.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    max_retries: usize,
}

impl HttpTransport {
    pub fn from_env(endpoint: &str, key_var: &str) -> Result<Self, GatewayError> {
        let api_key = std::env::var(key_var).map_err(|_| {
            GatewayError::Transport(format!("credential environment variable {key_var} not set"))
        })?;
        Ok(HttpTransport {
            endpoint: endpoint.to_string(),
            api_key,
            client: reqwest::blocking::Client::new(),
            max_retries: 3,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &LlmRequest) -> Result<String, GatewayError> {
        let body = serde_json::json!({
            "model": request.model_tag,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [{"role": "user", "content": request.prompt_text}],
        });
        let mut last_err = String::from("no attempt made");
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << (attempt - 1)));
            }
            let resp = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match resp {
                Ok(r) => {
                    let status = r.status();
                    if status.as_u16() == 429 {
                        return Err(GatewayError::Quota(format!("{} returned 429", self.endpoint)));
                    }
                    if status.is_server_error() {
                        last_err = format!("HTTP {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(GatewayError::Transport(format!("HTTP {status}")));
                    }
                    let json: serde_json::Value = r
                        .json()
                        .map_err(|e| GatewayError::Transport(format!("bad response body: {e}")))?;
                    let text = json["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            GatewayError::Transport("response missing message content".into())
                        })?;
                    return Ok(text.to_string());
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::Transport(format!(
            "gave up after {} retries: {last_err}",
            self.max_retries
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    /// Serve from the cassette only; a miss is an error.
    Replay,
    /// Serve from the cassette when possible, otherwise call the
    /// transport and append the answer.
    Record,
    /// Always call the transport; the cassette is untouched.
    Live,
}

pub struct Backend<'a> {
    pub mode: BackendMode,
    pub cassette: Mutex<Cassette>,
    pub transport: Option<&'a dyn Transport>,
}

impl<'a> Backend<'a> {
    pub fn replay(cassette: Cassette) -> Self {
        Backend { mode: BackendMode::Replay, cassette: Mutex::new(cassette), transport: None }
    }

    pub fn record(cassette: Cassette, transport: &'a dyn Transport) -> Self {
        Backend {
            mode: BackendMode::Record,
            cassette: Mutex::new(cassette),
            transport: Some(transport),
        }
    }

    pub fn live(transport: &'a dyn Transport) -> Self {
        Backend {
            mode: BackendMode::Live,
            cassette: Mutex::new(Cassette::default()),
            transport: Some(transport),
        }
    }
}

/// Resolve one request against the backend. `target` labels errors only.
pub fn send(
    request: &LlmRequest,
    backend: &Backend,
    target: &str,
) -> Result<LlmExchange, GatewayError> {
    let hash = request.request_hash();
    let started = Instant::now();

    if backend.mode != BackendMode::Live {
        let cassette = backend.cassette.lock().unwrap();
        if let Some(response) = cassette.entries.get(&hash) {
            return Ok(LlmExchange {
                request: request.clone(),
                response_text: response.clone(),
                latency_ms: started.elapsed().as_millis() as u64,
                source: ExchangeSource::Replay,
            });
        }
        if backend.mode == BackendMode::Replay {
            return Err(GatewayError::ReplayMiss { target: target.to_string(), hash });
        }
    }

    let transport = backend
        .transport
        .ok_or_else(|| GatewayError::Transport("no transport configured".into()))?;
    let response_text = transport.complete(request)?;
    if backend.mode == BackendMode::Record {
        backend.cassette.lock().unwrap().entries.insert(hash, response_text.clone());
    }
    Ok(LlmExchange {
        request: request.clone(),
        response_text,
        latency_ms: started.elapsed().as_millis() as u64,
        source: ExchangeSource::Live,
    })
}

/// Run a plan with bounded parallelism. Results come back in plan order;
/// per-entry failures are recorded in place and never abort the batch.
pub fn run_plan(
    plan: &[PromptInstance],
    backend: &Backend,
    parallelism: usize,
    temperature: f64,
    max_tokens: usize,
    model_tag: &str,
) -> Vec<Result<LlmExchange, GatewayError>> {
    assert!(parallelism >= 1, "parallelism must be at least 1");
    if plan.is_empty() {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<LlmExchange, GatewayError>>>> =
        plan.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(plan.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plan.len() {
                    break;
                }
                let instance = &plan[i];
                let request =
                    LlmRequest::new(&instance.text, temperature, max_tokens, model_tag);
                let outcome = send(&request, backend, &instance.target.to_string());
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every plan entry resolved"))
        .collect()
}

/// Exchange file for stage handoff: `hash status base64(response-or-error)`.
pub fn exchanges_text(results: &[Result<LlmExchange, GatewayError>]) -> String {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = String::new();
    for r in results {
        match r {
            Ok(ex) => {
                let _ = writeln!(
                    out,
                    "{} ok {}",
                    ex.request.request_hash(),
                    b64.encode(&ex.response_text)
                );
            }
            Err(e) => {
                let _ = writeln!(out, "- err {}", b64.encode(e.to_string()));
            }
        }
    }
    out
}

/// Parse the exchange file back into (status, text) records.
pub fn parse_exchanges_text(text: &str) -> Result<Vec<Result<String, String>>, String> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| format!("exchanges line {}: {msg}", lineno + 1);
        let mut parts = line.splitn(3, ' ');
        let _hash = parts.next().ok_or_else(|| err("missing hash"))?;
        let status = parts.next().ok_or_else(|| err("missing status"))?;
        let payload = parts
            .next()
            .and_then(|s| b64.decode(s).ok())
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| err("bad payload"))?;
        match status {
            "ok" => out.push(Ok(payload)),
            "err" => out.push(Err(payload)),
            _ => return Err(err("unknown status")),
        }
    }
    Ok(out)
}
