//! On-disk response cache, one JSON file per (request hash, sample index).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LlmError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_sha256: String,
    pub sample_index: usize,
    pub raw: String,
    pub label: String,
}

/// Hash of the backend identity and prompt text.
pub fn prompt_key(backend_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    writes: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(ResponseCache {
            dir,
            writes: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str, sample_index: usize) -> PathBuf {
        self.dir.join(format!("{key}-{sample_index:04}.json"))
    }

    pub fn get(&self, key: &str, sample_index: usize) -> Result<Option<CacheEntry>, LlmError> {
        let path = self.path(key, sample_index);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| cache_err(&path, e))?;
        if entry.prompt_sha256 != key || entry.sample_index != sample_index {
            return Err(cache_err(&path, "entry does not match its file name"));
        }
        Ok(Some(entry))
    }

    /// Writes through a temporary file so readers never see a partial entry.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), LlmError> {
        let path = self.path(&entry.prompt_sha256, entry.sample_index);
        let tmp = path.with_extension("json.tmp");
        let mut bytes = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        bytes.push(b'\n');
        let _guard = self.writes.lock().unwrap_or_else(|p| p.into_inner());
        fs::write(&tmp, &bytes).map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))
    }
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> LlmError {
    LlmError::Cache(format!("{}: {e}", path.display()))
}
