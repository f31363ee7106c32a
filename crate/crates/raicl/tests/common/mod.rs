//! Helpers shared by the integration targets.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use raicl::gateway::{BackendConfig, BackendKind, Clock, Gateway, HttpReply, HttpRequest, SimClock, Transport, TransportError};
use raicl::templates::{default_prompt_config, DEFAULT_CLASS_NAMES};
use raicl_core::prompt::build_prompt;
use raicl_core::{PromptBundle, Tier, TrialRef};

pub fn class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// A chat-completions reply carrying `text`.
pub fn chat_ok(text: &str) -> HttpReply {
    HttpReply {
        status: 200,
        body: serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
    }
}

pub fn status(code: u16) -> HttpReply {
    HttpReply {
        status: code,
        body: format!("status {code}"),
    }
}

/// Distinct zero-shot bundles; the query bytes encode `n`.
pub fn bundle(n: u64) -> PromptBundle {
    let cfg = default_prompt_config(Tier::Base, &class_names()).normalized().unwrap();
    let png: Arc<[u8]> = n.to_le_bytes().to_vec().into();
    build_prompt(&cfg, None, png, Some(TrialRef::new("S", n))).unwrap()
}

/// Replays a script of replies, then answers `fallback` forever. Records the
/// simulated time of every call.
pub struct ScriptedTransport {
    clock: SimClock,
    script: Mutex<VecDeque<Result<HttpReply, TransportError>>>,
    fallback: HttpReply,
    pub calls: Mutex<Vec<(u64, HttpRequest)>>,
}

impl ScriptedTransport {
    pub fn new(clock: &SimClock, script: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
        Arc::new(Self {
            clock: clock.clone(),
            script: Mutex::new(script.into()),
            fallback: chat_ok("The rhythm is sustained.\nDECISION: SEIZURE"),
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn call_times(&self) -> Vec<u64> {
        self.calls.lock().unwrap().iter().map(|(t, _)| *t).collect()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        self.calls.lock().unwrap().push((self.clock.now_ms(), request.clone()));
        self.script.lock().unwrap().pop_front().unwrap_or_else(|| Ok(self.fallback.clone()))
    }
}

pub fn remote_config() -> BackendConfig {
    BackendConfig {
        kind: BackendKind::RemoteChat,
        model: "test-vlm".into(),
        max_retries: 3,
        requests_per_minute: 0,
        backoff_base_ms: 1000,
        backoff_max_ms: 4000,
        ..BackendConfig::default()
    }
}

pub fn remote_gateway(config: BackendConfig, transport: Arc<ScriptedTransport>, clock: &SimClock) -> Gateway {
    let clock: Arc<dyn Clock> = Arc::new(clock.clone());
    Gateway::remote(config, transport, "test-key".into(), clock).unwrap()
}

/// A minimal HTTP/1.1 server: one request per connection, answered by
/// `handler(method, path, content_type, body) -> (status, body)`.
pub struct StubServer {
    pub url: String,
    pub requests: RequestLog,
}

/// `(method, path, body)` per request received.
pub type RequestLog = Arc<Mutex<Vec<(String, String, Vec<u8>)>>>;

pub type Handler = dyn Fn(&str, &str, &str, &[u8]) -> (u16, String) + Send + Sync;

impl StubServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let method = parts.next().unwrap_or("").to_owned();
                let path = parts.next().unwrap_or("").to_owned();
                let mut len = 0usize;
                let mut content_type = String::new();
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        match k.trim().to_ascii_lowercase().as_str() {
                            "content-length" => len = v.trim().parse().unwrap_or(0),
                            "content-type" => content_type = v.trim().to_owned(),
                            _ => {}
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let (status, reply) = handler(&method, &path, &content_type, &body);
                log.lock().unwrap().push((method, path, body));
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.flush();
            }
        });
        Self { url, requests }
    }

    /// Answers `/info` with `model`/`dim` and `/embed` with a vector derived
    /// from the body hash, `reply_dim` long.
    pub fn encoder(model: &'static str, dim: usize, reply_dim: usize) -> Self {
        Self::start(Arc::new(move |method: &str, path: &str, ct: &str, body: &[u8]| match (method, path) {
            ("GET", "/info") => (
                200,
                serde_json::json!({"model_id": model, "dimension": dim, "deterministic": true}).to_string(),
            ),
            ("POST", "/embed") if ct == "image/png" => {
                let vector = hash_vector(body, reply_dim);
                (
                    200,
                    serde_json::json!({"model_id": model, "dimension": reply_dim, "vector": vector}).to_string(),
                )
            }
            ("POST", "/embed") => (415, "{\"error\": \"expected image/png\"}".into()),
            _ => (404, "{}".into()),
        }))
    }
}

pub fn hash_vector(bytes: &[u8], dim: usize) -> Vec<f32> {
    let d = raicl_core::digest::sha256_hex(bytes);
    let d = d.as_bytes();
    (0..dim).map(|i| (d[i % d.len()] - b'0') as f32 + 0.5).collect()
}
