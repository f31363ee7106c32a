//! Embedding stores for synthetic datasets: every trial is rendered and the
//! generator's vector is stored under the image digest, with an index entry.

use raicl_core::selection::EmbeddingLookup;
use raicl_core::synth::{synthesize_embeddings, EmbeddingModel};
use raicl_core::{Dataset, RenderConfig};
use thiserror::Error;

use crate::eval::render_all;
use crate::image::ImageError;
use crate::store::{EmbeddingStore, IndexKey, StoreError, StoreMeta};

#[derive(Debug, Error)]
pub enum SyntheticStoreError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("trials {0} and {1} render to identical images")]
    DuplicateImage(String, String),
}

pub fn synthetic_store(
    dataset: &Dataset,
    render: &RenderConfig,
    model: &EmbeddingModel,
    seed: u64,
) -> Result<EmbeddingStore, SyntheticStoreError> {
    let table = synthesize_embeddings(dataset, model, seed);
    let images = render_all(dataset, render)?;
    let mut store = EmbeddingStore::new(StoreMeta {
        provider_id: "file".into(),
        model_id: format!("synthetic-seed{seed}"),
        dimension: model.dim,
    });
    let mut owner = std::collections::HashMap::new();
    for im in &images {
        let digest = im.digest();
        if let Some(prev) = owner.insert(digest.clone(), im.source.to_string()) {
            return Err(SyntheticStoreError::DuplicateImage(prev, im.source.to_string()));
        }
        let v = table
            .embedding(&im.source.subject_id, im.source.trial_index)
            .expect("generator covers every trial");
        store.insert(&digest, v.to_vec())?;
        store.insert_index(
            IndexKey {
                subject_id: im.source.subject_id.clone(),
                trial_index: im.source.trial_index,
                config_digest: im.config_digest.clone(),
            },
            &digest,
        )?;
    }
    Ok(store)
}
