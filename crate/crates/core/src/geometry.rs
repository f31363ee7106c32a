//! Embedding-space kernels: cosine distance, centroids, representativeness
//! and medoids.
//!
//! Vectors are stored as `f32`; every accumulation (dot products, norms,
//! means) runs in `f64`. Ties are always broken toward the lowest index.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("empty vector set")]
    Empty,
    #[error("embedding contains a non-finite component at position {0}")]
    NonFinite(usize),
    #[error("embedding has dimension {found}, provider declares {declared}")]
    DeclaredDimension { declared: usize, found: usize },
}

/// Scalar types the kernels accept; everything is widened to `f64`.
pub trait Component: Copy {
    fn widen(self) -> f64;
}

impl Component for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Component for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
}

/// A validated image embedding with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub provider_id: String,
    pub model_id: String,
    /// Digest of the image bytes that were embedded.
    pub source_digest: String,
}

impl Embedding {
    /// Rejects non-finite, all-zero, or wrongly sized vectors.
    pub fn new(
        vector: Vec<f32>,
        declared_dim: usize,
        provider_id: impl Into<String>,
        model_id: impl Into<String>,
        source_digest: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        check_vector(&vector, declared_dim)?;
        Ok(Self {
            vector,
            provider_id: provider_id.into(),
            model_id: model_id.into(),
            source_digest: source_digest.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Ingestion check shared by every provider.
pub fn check_vector(vector: &[f32], declared_dim: usize) -> Result<(), GeometryError> {
    if vector.len() != declared_dim {
        return Err(GeometryError::DeclaredDimension {
            declared: declared_dim,
            found: vector.len(),
        });
    }
    if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }
    if vector.iter().all(|&x| x == 0.0) {
        return Err(GeometryError::ZeroNorm);
    }
    Ok(())
}

/// Arithmetic mean of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    pub members: usize,
}

fn dot_norms<A: Component, B: Component>(u: &[A], v: &[B]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.widen(), b.widen());
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    (dot, uu, vv)
}

/// `1 - u.v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance<A: Component, B: Component>(u: &[A], v: &[B]) -> Result<f64, GeometryError> {
    if u.len() != v.len() {
        return Err(GeometryError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (dot, uu, vv) = dot_norms(u, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(GeometryError::ZeroNorm);
    }
    // uu * vv is commutative, which keeps d(u, v) == d(v, u) bit for bit.
    let sim = dot / libm::sqrt(uu * vv);
    Ok((1.0 - sim).clamp(0.0, 2.0))
}

/// Componentwise mean.
pub fn centroid<'a, I>(embeddings: I) -> Result<Centroid, GeometryError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut iter = embeddings.into_iter();
    let first = iter.next().ok_or(GeometryError::Empty)?;
    let mut sum: Vec<f64> = first.iter().map(|&x| x as f64).collect();
    let mut members = 1usize;
    for e in iter {
        if e.len() != sum.len() {
            return Err(GeometryError::DimensionMismatch {
                left: sum.len(),
                right: e.len(),
            });
        }
        for (s, &x) in sum.iter_mut().zip(e) {
            *s += x as f64;
        }
        members += 1;
    }
    let n = members as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(Centroid { vector: sum, members })
}

/// Distance of an embedding to its class centroid.
pub fn representativeness(embedding: &[f32], centroid: &Centroid) -> Result<f64, GeometryError> {
    cosine_distance(embedding, &centroid.vector)
}

/// Index of the member closest (cosine) to the set's mean; lowest index on ties.
pub fn medoid<'a, I>(embeddings: I) -> Result<usize, GeometryError>
where
    I: IntoIterator<Item = &'a [f32]>,
    I::IntoIter: Clone,
{
    let iter = embeddings.into_iter();
    let c = centroid(iter.clone())?;
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in iter.enumerate() {
        let d = representativeness(e, &c)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(GeometryError::Empty)
}

/// Orders `(index, score)` pairs by ascending score, then ascending index.
pub fn by_score_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Indices of the `k` smallest scores, ascending, lowest index on ties.
pub fn smallest_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(by_score_then_index);
    ranked.truncate(k);
    ranked
}

/// L2 normalization helper for callers that want unit vectors.
pub fn normalized(v: &[f32]) -> Result<Vec<f32>, GeometryError> {
    let n = libm::sqrt(v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>());
    if n == 0.0 {
        return Err(GeometryError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}
