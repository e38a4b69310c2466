use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{parse_metadata_date, registrable_domain, snippet_leading_date, RawSearchResult, SearchError, SearchQuery};

/// Environment variable holding the search API key.
pub const SEARCH_KEY_ENV: &str = "FACTCHECK_SEARCH_KEY";

/// A search backend. Implementations return results in provider rank order
/// with ranks starting at 1; retries, caching and rate limiting live in
/// [`super::Retriever`].
pub trait SearchProvider: Send + Sync {
    fn name(&self) -> &str;
    fn fetch(&self, query: &SearchQuery) -> Result<Vec<RawSearchResult>, SearchError>;
}

#[derive(Debug, Deserialize)]
struct ProviderResponse {
    #[serde(default)]
    items: Vec<ProviderItem>,
}

#[derive(Debug, Deserialize)]
struct ProviderItem {
    #[serde(default)]
    title: String,
    link: String,
    #[serde(default)]
    snippet: String,
    /// Non-standard shortcut some proxies emit.
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    pagemap: Option<Pagemap>,
}

#[derive(Debug, Deserialize)]
struct Pagemap {
    #[serde(default)]
    metatags: Vec<BTreeMap<String, Value>>,
}

const DATE_METATAGS: [&str; 6] = [
    "article:published_time",
    "og:published_time",
    "datepublished",
    "date",
    "pubdate",
    "dc.date",
];

impl ProviderItem {
    fn publish_date(&self) -> Option<chrono::NaiveDate> {
        let structured = self.date.as_deref().and_then(parse_metadata_date).or_else(|| {
            let tags = &self.pagemap.as_ref()?.metatags;
            DATE_METATAGS.iter().find_map(|key| {
                tags.iter()
                    .find_map(|t| t.get(*key).and_then(Value::as_str))
                    .and_then(parse_metadata_date)
            })
        });
        structured.or_else(|| snippet_leading_date(&self.snippet))
    }
}

/// Normalizes a Google Programmable Search style body (`items[]` of
/// `{title, link, snippet, pagemap.metatags}`) into ranked results. Items
/// without a parseable link are skipped; ranks stay contiguous.
pub fn parse_provider_response(body: &str, max_results: usize) -> Result<Vec<RawSearchResult>, SearchError> {
    let parsed: ProviderResponse = serde_json::from_str(body).map_err(|e| SearchError::Malformed {
        message: e.to_string(),
        body: body.to_string(),
    })?;
    let mut out = Vec::new();
    for item in parsed.items {
        if out.len() == max_results {
            break;
        }
        let Some(domain) = registrable_domain(&item.link) else {
            log::warn!("skipping search result with unparseable link `{}`", item.link);
            continue;
        };
        out.push(RawSearchResult {
            publish_date: item.publish_date(),
            title: crate::text::collapse_whitespace(&item.title),
            snippet: crate::text::collapse_whitespace(&item.snippet),
            url: item.link,
            source_domain: domain,
            rank: out.len() as u32 + 1,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoogleProviderConfig {
    pub endpoint: String,
    /// Search engine id (`cx`).
    pub engine_id: String,
    pub timeout_ms: u64,
}

impl Default for GoogleProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://www.googleapis.com/customsearch/v1".into(),
            engine_id: String::new(),
            timeout_ms: 15_000,
        }
    }
}

/// HTTP adapter for Google-compatible search endpoints.
pub struct GoogleProvider {
    config: GoogleProviderConfig,
    key: String,
    http: reqwest::blocking::Client,
}

impl fmt::Debug for GoogleProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GoogleProvider").field("config", &self.config).finish_non_exhaustive()
    }
}

impl GoogleProvider {
    /// Reads the API key from [`SEARCH_KEY_ENV`].
    pub fn from_env(config: GoogleProviderConfig) -> Result<Self, SearchError> {
        let key = std::env::var(SEARCH_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| SearchError::MissingCredential(SEARCH_KEY_ENV.into()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: GoogleProviderConfig, key: impl Into<String>) -> Result<Self, SearchError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| SearchError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { config, key: key.into(), http })
    }
}

impl SearchProvider for GoogleProvider {
    fn name(&self) -> &str {
        "google"
    }

    fn fetch(&self, query: &SearchQuery) -> Result<Vec<RawSearchResult>, SearchError> {
        let num = query.max_results.to_string();
        let response = self
            .http
            .get(&self.config.endpoint)
            .query(&[
                ("q", query.text.as_str()),
                ("num", num.as_str()),
                ("key", self.key.as_str()),
                ("cx", self.config.engine_id.as_str()),
            ])
            .send()
            // reqwest errors embed the URL, which carries the key
            .map_err(|e| SearchError::Transport { attempts: 1, message: e.without_url().to_string() })?;
        let status = response.status();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = response
            .text()
            .map_err(|e| SearchError::Transport { attempts: 1, message: e.without_url().to_string() })?;
        if !status.is_success() {
            return Err(SearchError::Status { status: status.as_u16(), body, retry_after });
        }
        parse_provider_response(&body, query.max_results)
    }
}

/// Canned provider for offline runs: a JSON document mapping claim ids (or
/// query texts) to provider-shaped response bodies.
///
/// ```json
/// { "responses": { "claim-1": { "items": [ ... ] } } }
/// ```
#[derive(Debug, Default)]
pub struct FixtureProvider {
    responses: BTreeMap<String, Value>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
struct FixtureFile {
    responses: BTreeMap<String, Value>,
}

impl FixtureProvider {
    pub fn new(responses: BTreeMap<String, Value>) -> Self {
        Self { responses, calls: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self, SearchError> {
        let cache_err = |message: String| SearchError::Cache { path: path.display().to_string(), message };
        let body = std::fs::read_to_string(path).map_err(|e| cache_err(e.to_string()))?;
        let file: FixtureFile = serde_json::from_str(&body).map_err(|e| cache_err(e.to_string()))?;
        Ok(Self::new(file.responses))
    }

    /// Number of `fetch` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl SearchProvider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn fetch(&self, query: &SearchQuery) -> Result<Vec<RawSearchResult>, SearchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.responses.get(&query.claim_id).or_else(|| self.responses.get(&query.text)) {
            Some(value) => parse_provider_response(&value.to_string(), query.max_results),
            None => Ok(Vec::new()),
        }
    }
}
