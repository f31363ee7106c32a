//! Offline oracle backend.

use std::collections::HashMap;
use std::sync::Arc;

use raicl_core::digest::sha256_hex;
use raicl_core::nearest::nearest_support;
use raicl_core::prompt::{decision_line, parse_decision, ImageRole};
use raicl_core::{ClassLabel, PromptBundle};

use super::{GatewayError, VlmResponse};
use crate::store::EmbeddingStore;

/// Embedding lookup by image digest.
pub trait ImageEmbeddings: Send + Sync {
    fn by_digest(&self, digest: &str) -> Option<Arc<[f32]>>;
}

impl ImageEmbeddings for EmbeddingStore {
    fn by_digest(&self, digest: &str) -> Option<Arc<[f32]>> {
        self.get(digest).cloned()
    }
}

impl ImageEmbeddings for HashMap<String, Arc<[f32]>> {
    fn by_digest(&self, digest: &str) -> Option<Arc<[f32]>> {
        self.get(digest).cloned()
    }
}

pub const MOCK_BACKEND_ID: &str = "mock_nearest_support";

/// Answers with the class of the support image nearest to the query image,
/// ties to the earlier image, formatted as a `DECISION:` line and parsed back.
pub fn mock_classify(
    bundle: &PromptBundle,
    embeddings: &dyn ImageEmbeddings,
    class_names: &[String],
) -> Result<VlmResponse, GatewayError> {
    let lookup = |png: &[u8]| {
        let digest = sha256_hex(png);
        embeddings.by_digest(&digest).ok_or(GatewayError::MissingEmbedding(digest))
    };
    let mut query = None;
    let mut examples: Vec<(ClassLabel, Arc<[f32]>)> = Vec::new();
    for (role, png) in bundle.images() {
        match role {
            ImageRole::Query => query = Some(lookup(png)?),
            ImageRole::Example { class_name } => {
                let idx = class_names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(class_name))
                    .ok_or_else(|| GatewayError::MalformedReply(format!("unknown example class {class_name}")))?;
                examples.push((ClassLabel(idx as u32), lookup(png)?));
            }
        }
    }
    let query = query.ok_or_else(|| GatewayError::MalformedReply("bundle has no query image".into()))?;
    let raw_text = if examples.is_empty() {
        "No labeled support examples were provided, so no nearest example exists.".to_owned()
    } else {
        let (pos, label, d) = nearest_support(&query, examples.iter().map(|(l, e)| (*l, &e[..])))?;
        format!(
            "Nearest support example: #{} at cosine distance {d:.6}.\n{}",
            pos + 1,
            decision_line(&class_names[label.index()].to_uppercase())
        )
    };
    Ok(VlmResponse {
        decision: parse_decision(&raw_text, class_names),
        raw_text,
        latency_ms: 0,
        backend_id: MOCK_BACKEND_ID.into(),
        from_cache: false,
        prompt_digest: bundle.digest.clone(),
        retries: 0,
    })
}
