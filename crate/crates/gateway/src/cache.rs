//! Response cache keyed by the SHA-256 of the PNG bytes sent, kept in memory
//! and optionally mirrored to `<root>/<endpoint-id>/<sha256>.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use metaod_core::DetectionSet;
use sha2::{Digest, Sha256};

use crate::protocol::{encode_response, parse_response};

pub fn cache_key(png: &[u8]) -> String {
    hex::encode(Sha256::digest(png))
}

pub struct ResponseCache {
    memory: Mutex<HashMap<String, DetectionSet>>,
    dir: Option<PathBuf>,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { memory: Mutex::new(HashMap::new()), dir: None, tmp_counter: AtomicU64::new(0) }
    }

    /// Cache persisted under `dir` (the endpoint's own directory).
    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), ..Self::in_memory() }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<DetectionSet> {
        if let Some(hit) = self.memory.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let bytes = std::fs::read(self.file(key)?).ok()?;
        match parse_response(&bytes, key) {
            Ok(set) => {
                self.memory.lock().unwrap().insert(key.to_string(), set.clone());
                Some(set)
            }
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {key}: {e}");
                None
            }
        }
    }

    /// Stores a response; disk writes go through a temporary file and rename.
    pub fn put(&self, key: &str, set: &DetectionSet) -> std::io::Result<()> {
        self.memory.lock().unwrap().insert(key.to_string(), set.clone());
        let Some(path) = self.file(key) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache file has a parent");
        std::fs::create_dir_all(dir)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        std::fs::write(&tmp, encode_response(set))?;
        std::fs::rename(&tmp, &path)
    }
}
