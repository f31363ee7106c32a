//! Executes prompt bundles against a VLM backend with a response cache,
//! retries with exponential backoff, and a per-minute request cap.

mod cache;
mod chat;
mod clock;
mod config;
mod mock;
mod transport;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use raicl_core::geometry::GeometryError;
use raicl_core::limiter::{backoff_ms, SlidingWindowLimiter};
use raicl_core::prompt::parse_decision;
use raicl_core::{Decision, PromptBundle};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheRecord, ResponseCache, AUDIT_FILE};
pub use chat::{reply_text, request_body};
pub use clock::{Clock, SimClock, SystemClock};
pub use config::{BackendConfig, BackendKind};
pub use mock::{mock_classify, ImageEmbeddings, MOCK_BACKEND_ID};
pub use transport::{HttpReply, HttpRequest, Transport, TransportError, UreqTransport};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend config: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set; export it or set backend.api_key_env")]
    MissingApiKey(String),
    #[error("authentication failed with HTTP {status}: {body}")]
    Auth { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("no embedding for image digest {0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub raw_text: String,
    pub decision: Decision,
    pub latency_ms: u64,
    pub backend_id: String,
    pub from_cache: bool,
    /// Digest of the bundle that produced this response.
    pub prompt_digest: String,
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub network_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub refreshes: u64,
}

enum Backend {
    Remote {
        transport: Arc<dyn Transport>,
        api_key: String,
    },
    Mock {
        embeddings: Arc<dyn ImageEmbeddings>,
    },
}

pub struct Gateway {
    config: BackendConfig,
    backend: Backend,
    cache: Option<ResponseCache>,
    refresh: bool,
    clock: Arc<dyn Clock>,
    limiter: Mutex<SlidingWindowLimiter>,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
    refreshes: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.config.backend_id())
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    fn build(config: BackendConfig, backend: Backend, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self {
            limiter: Mutex::new(SlidingWindowLimiter::per_minute(config.requests_per_minute as usize)),
            config,
            backend,
            cache: None,
            refresh: false,
            clock,
            network_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            refreshes: AtomicU64::new(0),
        })
    }

    /// Remote backend with an explicit transport and key.
    pub fn remote(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
        api_key: String,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        Self::build(config, Backend::Remote { transport, api_key }, clock)
    }

    /// Remote backend over HTTP, reading the key from `config.api_key_env`.
    pub fn remote_from_env(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::MissingApiKey(config.api_key_env.clone()))?;
        Self::remote(config, Arc::new(UreqTransport::new()), api_key, Arc::new(SystemClock::new()))
    }

    /// Mock backend. Its answers are a pure function of the bundle and the
    /// embeddings, so they bypass the response cache.
    pub fn mock(config: BackendConfig, embeddings: Arc<dyn ImageEmbeddings>) -> Result<Self, GatewayError> {
        let config = BackendConfig {
            kind: BackendKind::MockNearestSupport,
            ..config
        };
        Self::build(config, Backend::Mock { embeddings }, Arc::new(SystemClock::new()))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Skip cache reads; fresh responses overwrite records with an audit note.
    pub fn with_refresh(mut self, refresh: bool) -> Self {
        self.refresh = refresh;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            network_calls: self.network_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            refreshes: self.refreshes.load(Ordering::Relaxed),
        }
    }

    pub fn classify(&self, bundle: &PromptBundle, class_names: &[String]) -> Result<VlmResponse, GatewayError> {
        match &self.backend {
            Backend::Mock { embeddings } => mock_classify(bundle, embeddings.as_ref(), class_names),
            Backend::Remote { transport, api_key } => self.classify_remote(bundle, class_names, transport.as_ref(), api_key),
        }
    }

    fn classify_remote(
        &self,
        bundle: &PromptBundle,
        class_names: &[String],
        transport: &dyn Transport,
        api_key: &str,
    ) -> Result<VlmResponse, GatewayError> {
        let model = &self.config.model;
        if let (Some(cache), false) = (&self.cache, self.refresh) {
            if let Some(rec) = cache.get(&bundle.digest, model)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(VlmResponse {
                    decision: parse_decision(&rec.raw_response, class_names),
                    raw_text: rec.raw_response,
                    latency_ms: 0,
                    backend_id: rec.backend_id,
                    from_cache: true,
                    prompt_digest: bundle.digest.clone(),
                    retries: 0,
                });
            }
        }

        let request = HttpRequest {
            url: self.config.endpoint.clone(),
            headers: vec![("authorization".into(), format!("Bearer {api_key}"))],
            body: request_body(bundle, &self.config).to_string(),
            timeout: Duration::from_secs_f64(self.config.timeout_s),
        };
        let started = self.clock.now_ms();
        let mut attempt = 0u32;
        let raw_text = loop {
            self.pace();
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let failure = match transport.post_json(&request) {
                Ok(HttpReply { status: 200..=299, body }) => break reply_text(&body)?,
                Ok(HttpReply { status: s @ (401 | 403), body }) => return Err(GatewayError::Auth { status: s, body }),
                Ok(HttpReply { status: s @ (429 | 500..=599), body }) => format!("HTTP {s}: {body}"),
                Ok(HttpReply { status, body }) => return Err(GatewayError::HttpStatus { status, body }),
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.max_retries {
                return Err(GatewayError::Exhausted {
                    attempts: attempt + 1,
                    last: failure,
                });
            }
            let wait = backoff_ms(attempt, self.config.backoff_base_ms, self.config.backoff_max_ms);
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(retry = attempt, wait_ms = wait, prompt = %bundle.digest, "transient backend failure: {failure}");
            self.clock.sleep_ms(wait);
        };
        let latency_ms = self.clock.now_ms().saturating_sub(started);

        if let Some(cache) = &self.cache {
            let record = CacheRecord {
                request_digest: bundle.digest.clone(),
                model: model.clone(),
                backend_id: self.config.backend_id(),
                timestamp_ms: unix_ms(),
                raw_response: raw_text.clone(),
            };
            cache.put(&record, self.refresh)?;
            if self.refresh {
                self.refreshes.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(VlmResponse {
            decision: parse_decision(&raw_text, class_names),
            raw_text,
            latency_ms,
            backend_id: self.config.backend_id(),
            from_cache: false,
            prompt_digest: bundle.digest.clone(),
            retries: attempt,
        })
    }

    /// Blocks until the rate cap admits one more request.
    fn pace(&self) {
        loop {
            let wait = {
                let mut l = self.limiter.lock().unwrap_or_else(|p| p.into_inner());
                match l.try_acquire(self.clock.now_ms()) {
                    Ok(()) => return,
                    Err(w) => w,
                }
            };
            self.clock.sleep_ms(wait);
        }
    }
}

fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
