//! Response cache keyed by prompt and candidate tokens, persisted as JSONL.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendRequest, BackendResponse};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::hashing::{digest_parts, hex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    response: BackendResponse,
}

pub struct CachedBackend<B> {
    inner: B,
    entries: RwLock<HashMap<String, BackendResponse>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Prompt text and candidate tokens, plus the query and passage ids when the
/// request carries them (two passages with identical text stay distinct).
pub fn cache_key(req: &BackendRequest) -> String {
    let mut parts: Vec<&[u8]> = vec![b"prompt", req.prompt_text.as_bytes(), b"tokens"];
    parts.extend(req.candidate_tokens.iter().map(|t| t.as_bytes()));
    if let Some(ctx) = &req.context {
        parts.push(b"ids");
        parts.push(ctx.query_id.as_bytes());
        parts.extend(ctx.doc_ids.iter().map(|d| d.as_bytes()));
    }
    hex(&digest_parts(&parts))
}

impl<B> CachedBackend<B> {
    pub fn in_memory(inner: B) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Loads `path` when it exists; [`save`](Self::save) writes back to it.
    pub fn open(inner: B, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::io(format!("open cache {}", path.display()), e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(format!("read cache {}", path.display()), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Entry = serde_json::from_str(&line)
                    .map_err(|err| Error::parse(&path, i + 1, err.to_string()))?;
                entries.insert(e.key, e.response);
            }
        }
        Ok(Self {
            inner,
            entries: RwLock::new(entries),
            path: Some(path),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Writes all entries sorted by key; a no-op for in-memory caches.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let entries = self.entries.read().unwrap_or_else(|p| p.into_inner());
        let mut keys: Vec<&String> = entries.keys().collect();
        keys.sort();
        write_atomic(path, |w| {
            for k in keys {
                let line = serde_json::to_string(&Entry {
                    key: k.clone(),
                    response: entries[k].clone(),
                })
                .map_err(std::io::Error::other)?;
                writeln!(w, "{line}")?;
            }
            Ok(())
        })
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let key = cache_key(req);
        if let Some(hit) = self.entries.read().unwrap_or_else(|p| p.into_inner()).get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            let mut r = hit.clone();
            r.cached = true;
            r.latency = Default::default();
            return Ok(r);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = self.inner.score_continuations(req)?;
        fresh.check_against(req)?;
        let mut stored = fresh.clone();
        stored.latency = Default::default();
        self.entries
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, stored);
        Ok(fresh)
    }
}
