//! Response cache: one JSON record per (prompt digest, model).

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use raicl_core::digest::FramedHasher;
use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;

pub const AUDIT_FILE: &str = "audit.log";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_digest: String,
    pub model: String,
    pub backend_id: String,
    pub timestamp_ms: u64,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AuditNote<'a> {
    timestamp_ms: u64,
    event: &'a str,
    key: &'a str,
    request_digest: &'a str,
    model: &'a str,
    previous_raw_response: Option<&'a str>,
}

/// Concurrent readers, serialized writers. Records are replaced atomically.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

pub fn cache_key(prompt_digest: &str, model: &str) -> String {
    let mut h = FramedHasher::new();
    h.str("response-cache/v1").str(prompt_digest).str(model);
    h.finish_hex()
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            writer: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A record is returned only if it matches both digest and model.
    pub fn get(&self, prompt_digest: &str, model: &str) -> io::Result<Option<CacheRecord>> {
        let path = self.path(&cache_key(prompt_digest, model));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let rec: CacheRecord = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        Ok((rec.request_digest == prompt_digest && rec.model == model).then_some(rec))
    }

    /// Stores `record`. When `refresh` is set and a record existed, an audit
    /// note with the replaced response is appended to `audit.log`.
    pub fn put(&self, record: &CacheRecord, refresh: bool) -> io::Result<()> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let key = cache_key(&record.request_digest, &record.model);
        let previous = if refresh {
            self.get(&record.request_digest, &record.model)?
        } else {
            None
        };
        if refresh {
            let note = AuditNote {
                timestamp_ms: record.timestamp_ms,
                event: "forced refresh (--no-cache)",
                key: &key,
                request_digest: &record.request_digest,
                model: &record.model,
                previous_raw_response: previous.as_ref().map(|p| p.raw_response.as_str()),
            };
            fs::create_dir_all(&self.dir)?;
            let mut log = OpenOptions::new().create(true).append(true).open(self.dir.join(AUDIT_FILE))?;
            writeln!(log, "{}", serde_json::to_string(&note).expect("audit note serializes"))?;
        }
        let mut body = serde_json::to_string_pretty(record).expect("record serializes");
        body.push('\n');
        write_atomic(&self.path(&key), body.as_bytes())
    }
}
