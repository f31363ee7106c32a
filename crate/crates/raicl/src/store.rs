//! On-disk embedding store.
//!
//! A store directory holds:
//!
//! * `vectors.bin`: records of `digest` (64 ASCII hex bytes), `D` (u32 LE)
//!   and `D` f32 LE values, sorted by digest;
//! * `index.tsv`: `subject \t trial_index \t config_digest \t digest` rows
//!   mapping rendered trials to image digests;
//! * `meta.json`: provider and model provenance.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use raicl_core::geometry::{check_vector, GeometryError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;

pub const VECTORS_FILE: &str = "vectors.bin";
pub const INDEX_FILE: &str = "index.tsv";
pub const META_FILE: &str = "meta.json";
const DIGEST_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt store: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("vector for {digest} has dimension {found}, store holds {expected}")]
    Dimension { digest: String, expected: usize, found: usize },
    #[error("vector for {digest}: {source}")]
    Vector {
        digest: String,
        #[source]
        source: GeometryError,
    },
    #[error("digest {0:?} is not 64 lowercase hex characters")]
    BadDigest(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub provider_id: String,
    pub model_id: String,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexKey {
    pub subject_id: String,
    pub trial_index: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    pub meta: StoreMeta,
    vectors: HashMap<String, Arc<[f32]>>,
    index: BTreeMap<IndexKey, String>,
}

fn valid_digest(d: &str) -> bool {
    d.len() == DIGEST_LEN && d.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl EmbeddingStore {
    pub fn new(meta: StoreMeta) -> Self {
        Self {
            meta,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&Arc<[f32]>> {
        self.vectors.get(digest)
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.vectors.contains_key(digest)
    }

    /// Rejects non-finite, all-zero or wrongly sized vectors. The first
    /// insert into an empty store fixes `meta.dimension` when it is zero.
    pub fn insert(&mut self, digest: &str, vector: Vec<f32>) -> Result<(), StoreError> {
        if !valid_digest(digest) {
            return Err(StoreError::BadDigest(digest.to_owned()));
        }
        if self.meta.dimension == 0 {
            self.meta.dimension = vector.len();
        }
        if vector.len() != self.meta.dimension {
            return Err(StoreError::Dimension {
                digest: digest.to_owned(),
                expected: self.meta.dimension,
                found: vector.len(),
            });
        }
        check_vector(&vector, self.meta.dimension).map_err(|source| StoreError::Vector {
            digest: digest.to_owned(),
            source,
        })?;
        self.vectors.insert(digest.to_owned(), vector.into());
        Ok(())
    }

    pub fn insert_index(&mut self, key: IndexKey, digest: &str) -> Result<(), StoreError> {
        if !valid_digest(digest) {
            return Err(StoreError::BadDigest(digest.to_owned()));
        }
        self.index.insert(key, digest.to_owned());
        Ok(())
    }

    pub fn lookup_index(&self, subject_id: &str, trial_index: u64, config_digest: &str) -> Option<&str> {
        let key = IndexKey {
            subject_id: subject_id.to_owned(),
            trial_index,
            config_digest: config_digest.to_owned(),
        };
        self.index.get(&key).map(String::as_str)
    }

    pub fn index_entries(&self) -> impl Iterator<Item = (&IndexKey, &str)> {
        self.index.iter().map(|(k, v)| (k, v.as_str()))
    }

    /// Digests in ascending order.
    pub fn digests(&self) -> Vec<&str> {
        let mut d: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        d.sort_unstable();
        d
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let io_err = |path: PathBuf| move |source| StoreError::Io { path, source };
        let meta_path = dir.join(META_FILE);
        let meta = match fs::read_to_string(&meta_path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                path: meta_path.clone(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => StoreMeta::default(),
            Err(e) => return Err(io_err(meta_path)(e)),
        };
        let mut store = Self::new(meta);

        let vec_path = dir.join(VECTORS_FILE);
        match fs::read(&vec_path) {
            Ok(bytes) => store.read_vectors(&bytes, &vec_path)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(vec_path)(e)),
        }

        let idx_path = dir.join(INDEX_FILE);
        match fs::read_to_string(&idx_path) {
            Ok(text) => {
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
                    let corrupt = |reason: &str| StoreError::Corrupt {
                        path: idx_path.clone(),
                        reason: format!("line {}: {reason}", n + 1),
                    };
                    let f: Vec<&str> = line.split('\t').collect();
                    let [subject, trial, config, digest] = f[..] else {
                        return Err(corrupt("expected 4 tab-separated fields"));
                    };
                    let trial_index = trial.parse().map_err(|_| corrupt("bad trial index"))?;
                    store.insert_index(
                        IndexKey {
                            subject_id: subject.to_owned(),
                            trial_index,
                            config_digest: config.to_owned(),
                        },
                        digest,
                    )?;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(idx_path)(e)),
        }
        Ok(store)
    }

    fn read_vectors(&mut self, bytes: &[u8], path: &Path) -> Result<(), StoreError> {
        let corrupt = |reason: String| StoreError::Corrupt {
            path: path.to_owned(),
            reason,
        };
        let mut at = 0;
        while at < bytes.len() {
            if bytes.len() - at < DIGEST_LEN + 4 {
                return Err(corrupt(format!("truncated record header at byte {at}")));
            }
            let digest = std::str::from_utf8(&bytes[at..at + DIGEST_LEN])
                .map_err(|_| corrupt(format!("non-ascii digest at byte {at}")))?
                .to_owned();
            let d = u32::from_le_bytes(bytes[at + DIGEST_LEN..at + DIGEST_LEN + 4].try_into().unwrap()) as usize;
            at += DIGEST_LEN + 4;
            if bytes.len() - at < 4 * d {
                return Err(corrupt(format!("truncated vector for {digest}")));
            }
            let v = bytes[at..at + 4 * d]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at += 4 * d;
            self.insert(&digest, v)?;
        }
        Ok(())
    }

    pub fn vectors_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for digest in self.digests() {
            let v = &self.vectors[digest];
            out.extend_from_slice(digest.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Writes all three files atomically, in a deterministic order.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let io_err = |path: PathBuf| move |source| StoreError::Io { path, source };
        let vec_path = dir.join(VECTORS_FILE);
        write_atomic(&vec_path, &self.vectors_bytes()).map_err(io_err(vec_path.clone()))?;
        let mut idx = String::new();
        for (k, d) in &self.index {
            idx.push_str(&format!("{}\t{}\t{}\t{}\n", k.subject_id, k.trial_index, k.config_digest, d));
        }
        let idx_path = dir.join(INDEX_FILE);
        write_atomic(&idx_path, idx.as_bytes()).map_err(io_err(idx_path.clone()))?;
        let meta_path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes") + "\n";
        write_atomic(&meta_path, meta.as_bytes()).map_err(io_err(meta_path.clone()))
    }

    /// Flat CSV: one row per index entry with its vector, for external
    /// visualization. Digests without an index entry get empty key columns.
    pub fn export_csv(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.meta.dimension;
        write!(w, "subject_id,trial_index,config_digest,digest")?;
        for i in 0..d {
            write!(w, ",v{i}")?;
        }
        writeln!(w)?;
        let mut indexed = std::collections::HashSet::new();
        let rows = self
            .index
            .iter()
            .map(|(k, dg)| {
                indexed.insert(dg.as_str());
                (Some(k), dg.as_str())
            })
            .collect::<Vec<_>>();
        let loose: Vec<_> = self.digests().into_iter().filter(|dg| !indexed.contains(dg)).map(|dg| (None, dg)).collect();
        for (k, dg) in rows.into_iter().chain(loose) {
            let Some(v) = self.vectors.get(dg) else { continue };
            match k {
                Some(k) => write!(w, "{},{},{},{dg}", csv_field(&k.subject_id), k.trial_index, k.config_digest)?,
                None => write!(w, ",,,{dg}")?,
            }
            for x in v.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
