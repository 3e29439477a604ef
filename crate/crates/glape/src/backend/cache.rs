//! Append-only response cache keyed by request digest.
//!
//! File format: repeated records of a little-endian u32 length followed by
//! that many bytes of JSON `{"key": <hex digest>, "text": <completion>}`.
//! A record is visible only once fully written, so a crash mid-append costs
//! at most the trailing record; the truncated tail is dropped on the next
//! open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
}

/// Digest identifying one sampled completion. Two requests share a cache
/// entry only when every field that influences the completion matches.
pub fn cache_key(
    model_id: &str,
    system_text: Option<&str>,
    user_text: &str,
    temperature: f64,
    max_tokens: u32,
    sample_index: usize,
    run_seed: u64,
) -> String {
    let mut h = Sha256::new();
    let mut feed = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    feed(model_id.as_bytes());
    match system_text {
        Some(s) => {
            feed(b"system");
            feed(s.as_bytes());
        }
        None => feed(b"no-system"),
    }
    feed(user_text.as_bytes());
    feed(&temperature.to_bits().to_le_bytes());
    feed(&max_tokens.to_le_bytes());
    feed(&(sample_index as u64).to_le_bytes());
    feed(&run_seed.to_le_bytes());
    hex::encode(h.finalize())
}

pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<File>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub records: usize,
    pub bytes: u64,
}

impl ResponseCache {
    /// Open or create a cache file. Any unreadable tail (partial record from
    /// a crash) is truncated away before appending resumes.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let io_err = |e: std::io::Error| BackendError::CacheIo {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut entries = HashMap::new();
        let mut valid_len: u64 = 0;
        if path.exists() {
            let data = std::fs::read(path).map_err(io_err)?;
            let mut off = 0usize;
            while off + 4 <= data.len() {
                let len = u32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as usize;
                if off + 4 + len > data.len() {
                    break;
                }
                match serde_json::from_slice::<CacheRecord>(&data[off + 4..off + 4 + len]) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.text);
                    }
                    Err(_) => break,
                }
                off += 4 + len;
            }
            valid_len = off as u64;
            if valid_len < data.len() as u64 {
                tracing::warn!(
                    path = %path.display(),
                    dropped = data.len() as u64 - valid_len,
                    "dropping truncated cache tail"
                );
                let f = OpenOptions::new().write(true).open(path).map_err(io_err)?;
                f.set_len(valid_len).map_err(io_err)?;
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        let _ = valid_len;
        Ok(ResponseCache {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Append one record and make it visible to readers. Writes are
    /// serialized through a single file handle; reads never block writes
    /// longer than the map insert.
    pub fn put(&self, key: &str, text: &str) -> Result<(), BackendError> {
        let record = serde_json::to_vec(&CacheRecord {
            key: key.to_string(),
            text: text.to_string(),
        })
        .expect("cache record serializes");
        {
            let mut w = self.writer.lock().unwrap();
            w.write_all(&(record.len() as u32).to_le_bytes())
                .and_then(|_| w.write_all(&record))
                .and_then(|_| w.flush())
                .map_err(|e| BackendError::CacheIo {
                    path: self.path.display().to_string(),
                    message: e.to_string(),
                })?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(key.to_string(), text.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        let bytes = std::fs::metadata(&self.path).map(|m| m.len()).unwrap_or(0);
        CacheStats {
            records: self.len(),
            bytes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn put_get_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("k1", "first").unwrap();
            c.put("k2", "second").unwrap();
            assert_eq!(c.get("k1").as_deref(), Some("first"));
            assert_eq!(c.len(), 2);
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get("k2").as_deref(), Some("second"));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn truncated_tail_is_dropped_and_appends_continue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("k1", "kept").unwrap();
        }
        {
            // simulate a crash mid-append: length prefix promises more bytes
            // than are present
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(&1000u32.to_le_bytes()).unwrap();
            f.write_all(b"{\"key\": \"k2\"").unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("k1").as_deref(), Some("kept"));
        c.put("k3", "after crash").unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k3").as_deref(), Some("after crash"));
    }

    #[test]
    fn concurrent_puts_all_land() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let c = ResponseCache::open(&path).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..50 {
                        c.put(&format!("k{t}-{i}"), "v").unwrap();
                    }
                });
            }
        });
        assert_eq!(c.len(), 400);
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 400);
    }

    #[test]
    fn key_distinguishes_every_field() {
        let base = cache_key("m", None, "u", 0.7, 256, 0, 42);
        assert_ne!(base, cache_key("m2", None, "u", 0.7, 256, 0, 42));
        assert_ne!(base, cache_key("m", Some(""), "u", 0.7, 256, 0, 42));
        assert_ne!(base, cache_key("m", None, "u2", 0.7, 256, 0, 42));
        assert_ne!(base, cache_key("m", None, "u", 0.8, 256, 0, 42));
        assert_ne!(base, cache_key("m", None, "u", 0.7, 257, 0, 42));
        assert_ne!(base, cache_key("m", None, "u", 0.7, 256, 1, 42));
        assert_ne!(base, cache_key("m", None, "u", 0.7, 256, 0, 43));
        assert_eq!(base, cache_key("m", None, "u", 0.7, 256, 0, 42));
    }
}
