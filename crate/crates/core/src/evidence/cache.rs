use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RawSearchResult, SearchError, SearchQuery};
use crate::text::collapse_whitespace;

/// Hex SHA-256 over (provider, normalized query text, max_results).
pub fn cache_key(query: &SearchQuery, provider: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(provider.as_bytes());
    hasher.update([0u8]);
    hasher.update(collapse_whitespace(&query.text).as_bytes());
    hasher.update([0u8]);
    hasher.update(query.max_results.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub query: String,
    pub max_results: usize,
    pub retrieved_at: DateTime<Utc>,
    pub results: Vec<RawSearchResult>,
}

/// One JSON file per cache key. Readers never block; writers for the same
/// key are serialized and publish through an atomic rename.
#[derive(Debug)]
pub struct SearchCache {
    dir: PathBuf,
    write_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl SearchCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SearchError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_error(&dir, e))?;
        Ok(Self { dir, write_locks: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, SearchError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| cache_error(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(cache_error(&path, e)),
        }
    }

    pub fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), SearchError> {
        let lock = {
            let mut locks = self.write_locks.lock().expect("cache lock map poisoned");
            locks.entry(key.to_string()).or_default().clone()
        };
        let _guard = lock.lock().expect("cache key lock poisoned");
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let bytes = serde_json::to_vec_pretty(entry).expect("cache entries always serialize");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| cache_error(&path, e))
    }
}

fn cache_error(path: &Path, e: impl std::fmt::Display) -> SearchError {
    SearchError::Cache { path: path.display().to_string(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(text: &str, n: usize) -> SearchQuery {
        SearchQuery::new(text, n, "c").unwrap()
    }

    #[test]
    fn keys() {
        let a = cache_key(&q("vaccines cause autism", 10), "google");
        assert_eq!(a, cache_key(&q("vaccines  cause autism", 10), "google"));
        assert_ne!(a, cache_key(&q("vaccines cause autism", 5), "google"));
        assert_ne!(a, cache_key(&q("vaccines cause autism", 10), "fixture"));
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SearchCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("missing").unwrap(), None);
        let entry = CacheEntry {
            provider: "google".into(),
            query: "x".into(),
            max_results: 3,
            retrieved_at: "2024-03-01T12:00:00Z".parse().unwrap(),
            results: vec![RawSearchResult {
                title: "t".into(),
                snippet: "s".into(),
                url: "https://a.com/".into(),
                source_domain: "a.com".into(),
                publish_date: None,
                rank: 1,
            }],
        };
        cache.put("k", &entry).unwrap();
        assert_eq!(cache.get("k").unwrap(), Some(entry));
    }
}
