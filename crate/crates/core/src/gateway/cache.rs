use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, CompletionResponse, GatewayError, RequestFingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits, forward misses to the inner backend and append them.
    Record,
    /// Serve hits only; a miss is an error.
    ReplayOnly,
}

/// One line of the JSON Lines cache store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub fingerprint: RequestFingerprint,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

struct Store {
    entries: HashMap<RequestFingerprint, CompletionResponse>,
    file: Option<File>,
}

/// Record/replay layer keyed by request fingerprint, backed by an
/// append-only JSON Lines file.
pub struct ReplayCache {
    inner: Option<Arc<dyn Backend>>,
    mode: CacheMode,
    path: Option<PathBuf>,
    store: Mutex<Store>,
}

impl ReplayCache {
    /// In-memory cache with no backing file.
    pub fn in_memory(inner: Option<Arc<dyn Backend>>, mode: CacheMode) -> Self {
        ReplayCache {
            inner,
            mode,
            path: None,
            store: Mutex::new(Store { entries: HashMap::new(), file: None }),
        }
    }

    /// Opens (or creates, in record mode) the store at `path`.
    pub fn open(path: &Path, inner: Option<Arc<dyn Backend>>, mode: CacheMode) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Store(format!("{}:{}: {e}", path.display(), i + 1)))?;
                entries.entry(rec.fingerprint).or_insert(rec.response);
            }
        } else if mode == CacheMode::ReplayOnly {
            return Err(GatewayError::Store(format!("{} does not exist", path.display())));
        }
        let file = match mode {
            CacheMode::Record => Some(OpenOptions::new().create(true).append(true).open(path)?),
            CacheMode::ReplayOnly => None,
        };
        Ok(ReplayCache {
            inner,
            mode,
            path: Some(path.to_path_buf()),
            store: Mutex::new(Store { entries, file }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Backend for ReplayCache {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let fp = request.fingerprint();
        if let Some(hit) = self.store.lock().expect("cache poisoned").entries.get(&fp) {
            return Ok(hit.clone());
        }
        let inner = match (self.mode, &self.inner) {
            (CacheMode::Record, Some(inner)) => inner,
            _ => return Err(GatewayError::CacheMiss(fp.0)),
        };
        let response = inner.complete(request)?;

        let mut store = self.store.lock().expect("cache poisoned");
        if let Some(raced) = store.entries.get(&fp) {
            // Another thread recorded the same request first; keep one answer.
            return Ok(raced.clone());
        }
        if let Some(file) = store.file.as_mut() {
            let rec = CacheRecord { fingerprint: fp.clone(), request: request.clone(), response: response.clone() };
            let mut line = serde_json::to_string(&rec).map_err(|e| GatewayError::Store(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        store.entries.insert(fp, response.clone());
        Ok(response)
    }

    fn name(&self) -> &str {
        match self.mode {
            CacheMode::Record => "record",
            CacheMode::ReplayOnly => "replay",
        }
    }
}
