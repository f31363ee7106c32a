//! Embedding providers: a precomputed file store, a remote HTTP encoder, and
//! an in-memory cache in front of either.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use raicl_core::geometry::GeometryError;
use raicl_core::Embedding;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::WaveformImage;
use crate::store::{EmbeddingStore, IndexKey, StoreError, StoreMeta};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("embedding store has no vector for {} image digest(s): {}", .0.len(), .0.join(", "))]
    LookupMiss(Vec<String>),
    #[error("embedding provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider declared dimension {declared} but returned {found}")]
    DimensionMismatch { declared: usize, found: usize },
    #[error("provider rejected the image with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider reply: {0}")]
    Protocol(String),
    #[error("invalid embedding for {digest}: {source}")]
    Invalid {
        digest: String,
        #[source]
        source: GeometryError,
    },
}

/// Maps PNG bytes to a fixed-dimension vector.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn deterministic(&self) -> bool;
    /// `digest` is the SHA-256 of `png`.
    fn embed_png(&self, png: &[u8], digest: &str) -> Result<Vec<f32>, ProviderError>;
}

/// Embeds one image and validates the result against the declared dimension.
pub fn embed(image: &WaveformImage, provider: &dyn EmbeddingProvider) -> Result<Embedding, ProviderError> {
    let digest = image.digest();
    let v = provider.embed_png(&image.png_bytes, &digest)?;
    if v.len() != provider.dimension() {
        return Err(ProviderError::DimensionMismatch {
            declared: provider.dimension(),
            found: v.len(),
        });
    }
    Embedding::new(v, provider.dimension(), provider.provider_id(), provider.model_id(), &digest)
        .map_err(|source| ProviderError::Invalid { digest, source })
}

/// Embeds every image in parallel. Lookup misses are collected so the error
/// lists every missing digest, sorted and deduplicated.
pub fn embed_all(images: &[WaveformImage], provider: &dyn EmbeddingProvider) -> Result<Vec<Embedding>, ProviderError> {
    let results: Vec<Result<Embedding, ProviderError>> = images.par_iter().map(|im| embed(im, provider)).collect();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(e) => out.push(e),
            Err(ProviderError::LookupMiss(d)) => missing.extend(d),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(ProviderError::LookupMiss(missing));
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum FillError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("store holds {store_model:?} embeddings, provider serves {provider_model:?}")]
    ModelMismatch { store_model: String, provider_model: String },
}

/// Embeds the images `store` lacks and indexes every image. Returns the
/// number of new vectors. An empty store adopts the provider's identity.
pub fn fill_store(
    store: &mut EmbeddingStore,
    images: &[WaveformImage],
    provider: &dyn EmbeddingProvider,
) -> Result<usize, FillError> {
    if store.is_empty() {
        store.meta = StoreMeta {
            provider_id: provider.provider_id().to_owned(),
            model_id: provider.model_id().to_owned(),
            dimension: provider.dimension(),
        };
    } else if store.meta.model_id != provider.model_id() || store.meta.dimension != provider.dimension() {
        return Err(FillError::ModelMismatch {
            store_model: store.meta.model_id.clone(),
            provider_model: provider.model_id().to_owned(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    let missing: Vec<WaveformImage> = images
        .iter()
        .filter(|im| {
            let d = im.digest();
            !store.contains(&d) && seen.insert(d)
        })
        .cloned()
        .collect();
    for e in embed_all(&missing, provider)? {
        store.insert(&e.source_digest, e.vector)?;
    }
    for im in images {
        let key = IndexKey {
            subject_id: im.source.subject_id.clone(),
            trial_index: im.source.trial_index,
            config_digest: im.config_digest.clone(),
        };
        store.insert_index(key, &im.digest())?;
    }
    Ok(missing.len())
}

/// Reads vectors from a precomputed [`EmbeddingStore`].
#[derive(Debug, Clone)]
pub struct FileProvider {
    store: Arc<EmbeddingStore>,
}

impl FileProvider {
    pub fn new(store: Arc<EmbeddingStore>) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl EmbeddingProvider for FileProvider {
    fn provider_id(&self) -> &str {
        if self.store.meta.provider_id.is_empty() {
            "file"
        } else {
            &self.store.meta.provider_id
        }
    }

    fn model_id(&self) -> &str {
        &self.store.meta.model_id
    }

    fn dimension(&self) -> usize {
        self.store.meta.dimension
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed_png(&self, _png: &[u8], digest: &str) -> Result<Vec<f32>, ProviderError> {
        self.store
            .get(digest)
            .map(|v| v.to_vec())
            .ok_or_else(|| ProviderError::LookupMiss(vec![digest.to_owned()]))
    }
}

/// `GET /info` reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub model_id: String,
    pub dimension: usize,
    pub deterministic: bool,
}

/// `POST /embed` reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub model_id: String,
    pub dimension: usize,
    pub vector: Vec<f32>,
}

/// Client for a remote encoder service exposing `GET /info` and
/// `POST /embed` (raw PNG body).
#[derive(Debug)]
pub struct HttpProvider {
    base_url: String,
    agent: ureq::Agent,
    info: ServiceInfo,
    provider_id: String,
}

impl HttpProvider {
    /// Fetches `/info`; fails if the service is not ready.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_owned();
        let (status, body) = http_call(agent.get(format!("{base_url}/info")).call())?;
        if status != 200 {
            return Err(ProviderError::Unavailable(format!("GET /info returned HTTP {status}: {body}")));
        }
        let info: ServiceInfo =
            serde_json::from_str(&body).map_err(|e| ProviderError::Protocol(format!("/info: {e}")))?;
        if info.dimension == 0 {
            return Err(ProviderError::Protocol("/info declares dimension 0".into()));
        }
        Ok(Self {
            provider_id: format!("http:{base_url}"),
            base_url,
            agent,
            info,
        })
    }

    pub fn info(&self) -> &ServiceInfo {
        &self.info
    }
}

fn http_call(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<(u16, String), ProviderError> {
    let mut resp = result.map_err(|e| ProviderError::Unavailable(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ProviderError::Unavailable(format!("reading reply: {e}")))?;
    Ok((status, body))
}

impl EmbeddingProvider for HttpProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn model_id(&self) -> &str {
        &self.info.model_id
    }

    fn dimension(&self) -> usize {
        self.info.dimension
    }

    fn deterministic(&self) -> bool {
        self.info.deterministic
    }

    fn embed_png(&self, png: &[u8], _digest: &str) -> Result<Vec<f32>, ProviderError> {
        let (status, body) = http_call(
            self.agent
                .post(format!("{}/embed", self.base_url))
                .header("content-type", "image/png")
                .send(png),
        )?;
        match status {
            200 => {}
            503 => return Err(ProviderError::Unavailable(format!("POST /embed returned 503: {body}"))),
            _ => return Err(ProviderError::Rejected { status, body }),
        }
        let reply: EmbedReply =
            serde_json::from_str(&body).map_err(|e| ProviderError::Protocol(format!("/embed: {e}")))?;
        for found in [reply.dimension, reply.vector.len()] {
            if found != self.info.dimension {
                return Err(ProviderError::DimensionMismatch {
                    declared: self.info.dimension,
                    found,
                });
            }
        }
        if reply.model_id != self.info.model_id {
            return Err(ProviderError::Protocol(format!(
                "/embed model {:?} differs from /info model {:?}",
                reply.model_id, self.info.model_id
            )));
        }
        Ok(reply.vector)
    }
}

/// Memoizes a provider by image digest. Readers proceed concurrently; a miss
/// computes outside the lock and inserts under an exclusive lock, so a
/// reader never sees a partial vector.
pub struct CachedEmbedder<P> {
    inner: P,
    cache: RwLock<HashMap<String, Arc<[f32]>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn cached(&self, digest: &str) -> Option<Arc<[f32]>> {
        self.cache.read().expect("embedding cache poisoned").get(digest).cloned()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }

    fn embed_png(&self, png: &[u8], digest: &str) -> Result<Vec<f32>, ProviderError> {
        if let Some(v) = self.cached(digest) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.to_vec());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.embed_png(png, digest)?;
        let mut cache = self.cache.write().expect("embedding cache poisoned");
        let stored = cache.entry(digest.to_owned()).or_insert_with(|| v.into());
        Ok(stored.to_vec())
    }
}
