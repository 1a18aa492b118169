use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmError, MockRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    template_id: String,
    template_version: u32,
    response: String,
}

/// Content-addressed response cache: one file per idempotency key.
///
/// Readers share an in-memory index; writes are serialized and land on disk
/// through a temp-file rename.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            entries: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    /// Opens (creating if needed) a cache directory and indexes its files.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| LlmError::io(&dir, e))?;
        let mut entries = HashMap::new();
        for item in fs::read_dir(&dir).map_err(|e| LlmError::io(&dir, e))? {
            let path = item.map_err(|e| LlmError::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| LlmError::io(&path, e))?;
            let entry: CacheEntry =
                serde_json::from_str(&text).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
            entries.insert(entry.key.clone(), entry);
        }
        Ok(Self {
            dir: Some(dir),
            entries: RwLock::new(entries),
            write_lock: Mutex::new(()),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock")
            .get(key)
            .map(|e| e.response.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, request: &CompletionRequest, response: &str) -> Result<(), LlmError> {
        let entry = CacheEntry {
            key: request.idempotency_key(),
            template_id: request.template_id.as_str().to_string(),
            template_version: request.template_version,
            response: response.to_string(),
        };
        let _guard = self.write_lock.lock().expect("cache write lock");
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.json", entry.key));
            let tmp = dir.join(format!("{}.json.tmp", entry.key));
            let body = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
            fs::write(&tmp, body).map_err(|e| LlmError::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| LlmError::io(&path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Dumps every entry as mock-fixture records, sorted by key.
    pub fn export_fixture(&self) -> Vec<MockRecord> {
        let entries = self.entries.read().expect("cache lock");
        let mut out: Vec<MockRecord> = entries
            .values()
            .map(|e| MockRecord {
                key: e.key.clone(),
                template_id: Some(e.template_id.clone()),
                response: e.response.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }
}
