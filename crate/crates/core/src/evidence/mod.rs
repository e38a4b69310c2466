//! Evidence retrieval: query formulation, search providers, the result
//! cache and the fact-checker/date filters applied before prompting.

mod cache;
mod client;
mod provider;

use std::collections::BTreeSet;
use std::sync::LazyLock;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Claim;
use crate::text::collapse_whitespace;

pub use cache::{cache_key, CacheEntry, SearchCache};
pub use client::{RateLimiter, Retriever, RetrieverConfig, RetryPolicy, SearchResponse};
pub use provider::{
    parse_provider_response, FixtureProvider, GoogleProvider, GoogleProviderConfig, SearchProvider,
    SEARCH_KEY_ENV,
};

pub const DEFAULT_QUERY_CAP: usize = 512;
pub const DEFAULT_MAX_RESULTS: usize = 10;

pub const DEFAULT_BLOCKED_DOMAINS: [&str; 6] = [
    "snopes.com",
    "politifact.com",
    "factcheck.org",
    "fullfact.org",
    "leadstories.com",
    "checkyourfact.com",
];

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("search transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("search provider returned HTTP {status}: {body}")]
    Status {
        status: u16,
        body: String,
        /// Server-requested delay from a `Retry-After` header.
        retry_after: Option<Duration>,
    },
    #[error("malformed search provider response: {message}; payload: {body}")]
    Malformed { message: String, body: String },
    #[error("offline mode: no cached results for query `{query}` (key {key})")]
    Offline { query: String, key: String },
    #[error("search cache error at {path}: {message}")]
    Cache { path: String, message: String },
    #[error("search credential missing: set {0}")]
    MissingCredential(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

impl SearchError {
    pub(crate) fn is_retryable(&self) -> bool {
        match self {
            SearchError::Transport { .. } => true,
            SearchError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    pub max_results: usize,
    pub claim_id: String,
}

impl SearchQuery {
    pub fn new(text: impl Into<String>, max_results: usize, claim_id: impl Into<String>) -> Result<Self, SearchError> {
        let text = collapse_whitespace(&text.into());
        if text.is_empty() {
            return Err(SearchError::InvalidQuery("empty query text".into()));
        }
        if max_results == 0 {
            return Err(SearchError::InvalidQuery("max_results must be at least 1".into()));
        }
        Ok(Self { text, max_results, claim_id: claim_id.into() })
    }
}

/// One query per claim: the normalized claim text, capped at
/// [`DEFAULT_QUERY_CAP`] characters.
pub fn formulate_query(claim: &Claim, max_results: usize) -> SearchQuery {
    formulate_query_with_cap(claim, max_results, DEFAULT_QUERY_CAP)
}

pub fn formulate_query_with_cap(claim: &Claim, max_results: usize, cap: usize) -> SearchQuery {
    SearchQuery {
        text: truncate_on_word(&collapse_whitespace(&claim.text), cap),
        max_results: max_results.max(1),
        claim_id: claim.id.clone(),
    }
}

/// Cuts `s` to at most `cap` characters, backing off to the last space so no
/// word is split. A single word longer than `cap` is hard-cut.
pub(crate) fn truncate_on_word(s: &str, cap: usize) -> String {
    if s.chars().count() <= cap {
        return s.to_string();
    }
    let cut = s.char_indices().nth(cap).map(|(i, _)| i).unwrap_or(s.len());
    let head = &s[..cut];
    if s[cut..].starts_with(' ') {
        return head.trim_end().to_string();
    }
    match head.rfind(' ') {
        Some(space) if !head[..space].trim().is_empty() => head[..space].trim_end().to_string(),
        _ => head.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
    pub source_domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publish_date: Option<NaiveDate>,
    pub rank: u32,
}

/// Multi-label public suffixes common enough in news search results to
/// matter; everything else is treated as a single-label suffix.
const TWO_LABEL_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "ltd.uk", "me.uk", "net.uk", "com.au", "net.au", "org.au",
    "gov.au", "edu.au", "co.nz", "org.nz", "govt.nz", "co.jp", "ne.jp", "or.jp", "ac.jp", "co.in",
    "org.in", "gov.in", "com.br", "gov.br", "com.cn", "gov.cn", "com.hk", "org.hk", "gov.hk",
    "com.sg", "gov.sg", "com.tw", "co.za", "gov.za", "com.mx", "co.kr", "com.tr", "com.ar",
];

/// Lowercase registrable domain of a URL ("https://www.snopes.com/x" ->
/// "snopes.com"). `None` when the URL has no host.
pub fn registrable_domain(raw_url: &str) -> Option<String> {
    let parsed = url::Url::parse(raw_url).ok()?;
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    if parsed.host().is_some_and(|h| !matches!(h, url::Host::Domain(_))) {
        return Some(host);
    }
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    if labels.len() <= 2 {
        return Some(labels.join("."));
    }
    let last_two = labels[labels.len() - 2..].join(".");
    let keep = if TWO_LABEL_SUFFIXES.contains(&last_two.as_str()) { 3 } else { 2 };
    Some(labels[labels.len() - keep..].join("."))
}

static LEADING_DATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([A-Z][a-z]{2})\.? (\d{1,2}), (\d{4})\b").unwrap());

/// Parses a leading "Mon DD, YYYY" date as search engines prepend to
/// snippets ("May 1, 2021 ... text").
pub fn snippet_leading_date(snippet: &str) -> Option<NaiveDate> {
    let caps = LEADING_DATE.captures(snippet)?;
    let text = format!("{} {} {}", &caps[1], &caps[2], &caps[3]);
    NaiveDate::parse_from_str(&text, "%b %d %Y").ok()
}

/// Accepts ISO-8601 dates or datetimes, keeping only the calendar day.
pub fn parse_metadata_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.date_naive());
    }
    NaiveDate::parse_from_str(raw.get(..10)?, "%Y-%m-%d").ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub blocked_domains: BTreeSet<String>,
    pub enforce_date_ceiling: bool,
    pub drop_undated: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            blocked_domains: DEFAULT_BLOCKED_DOMAINS.iter().map(|d| d.to_string()).collect(),
            enforce_date_ceiling: true,
            drop_undated: false,
        }
    }
}

impl FilterPolicy {
    /// Keeps everything.
    pub fn permissive() -> Self {
        Self { blocked_domains: BTreeSet::new(), enforce_date_ceiling: false, drop_undated: false }
    }

    pub fn with_blocked<I, S>(mut self, domains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.blocked_domains
            .extend(domains.into_iter().map(|d| d.as_ref().trim().to_ascii_lowercase()));
        self
    }

    /// Why a result would be dropped, if it would.
    pub fn rejection(&self, result: &RawSearchResult, claim_date: Option<NaiveDate>) -> Option<DropReason> {
        if self.blocked_domains.contains(&result.source_domain.to_ascii_lowercase()) {
            return Some(DropReason::BlockedDomain);
        }
        match (result.publish_date, claim_date) {
            (Some(published), Some(ceiling)) if self.enforce_date_ceiling && published > ceiling => {
                Some(DropReason::PostDated)
            }
            (None, _) if self.drop_undated => Some(DropReason::Undated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BlockedDomain,
    PostDated,
    Undated,
}

/// Per-claim bookkeeping of what the filter did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub retrieved: usize,
    pub kept: usize,
    pub dropped_blocked: usize,
    pub dropped_post_dated: usize,
    pub dropped_undated: usize,
    pub undated_kept: usize,
    pub same_day_kept: usize,
    /// The claim had no date, so no ceiling could be applied.
    pub claim_undated: bool,
}

impl FilterStats {
    pub fn dropped(&self) -> usize {
        self.dropped_blocked + self.dropped_post_dated + self.dropped_undated
    }

    pub fn absorb(&mut self, other: &FilterStats) {
        self.retrieved += other.retrieved;
        self.kept += other.kept;
        self.dropped_blocked += other.dropped_blocked;
        self.dropped_post_dated += other.dropped_post_dated;
        self.dropped_undated += other.dropped_undated;
        self.undated_kept += other.undated_kept;
        self.same_day_kept += other.same_day_kept;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub claim_id: String,
    pub snippets: Vec<RawSearchResult>,
    #[serde(default)]
    pub retrieved_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub provider: String,
    #[serde(default)]
    pub stats: FilterStats,
}

impl EvidenceBundle {
    pub fn empty(claim_id: impl Into<String>) -> Self {
        Self {
            claim_id: claim_id.into(),
            snippets: Vec::new(),
            retrieved_at: None,
            provider: String::new(),
            stats: FilterStats::default(),
        }
    }

    pub fn with_source(mut self, provider: impl Into<String>, retrieved_at: DateTime<Utc>) -> Self {
        self.provider = provider.into();
        self.retrieved_at = Some(retrieved_at);
        self
    }
}

/// Applies `policy` to `results` in order. Blocked domains always go; a
/// result published strictly after the claim date goes when the ceiling is
/// enforced and both dates are known (same day stays); undated results go
/// only under `drop_undated`. Survivors keep their relative order.
pub fn filter_evidence(results: &[RawSearchResult], claim: &Claim, policy: &FilterPolicy) -> EvidenceBundle {
    let mut stats = FilterStats { retrieved: results.len(), claim_undated: claim.claim_date.is_none(), ..Default::default() };
    let mut kept = Vec::with_capacity(results.len());
    for result in results {
        match policy.rejection(result, claim.claim_date) {
            Some(DropReason::BlockedDomain) => stats.dropped_blocked += 1,
            Some(DropReason::PostDated) => stats.dropped_post_dated += 1,
            Some(DropReason::Undated) => stats.dropped_undated += 1,
            None => {
                match (result.publish_date, claim.claim_date) {
                    (None, _) => stats.undated_kept += 1,
                    (Some(p), Some(c)) if p == c => stats.same_day_kept += 1,
                    _ => {}
                }
                kept.push(result.clone());
            }
        }
    }
    stats.kept = kept.len();
    EvidenceBundle { claim_id: claim.id.clone(), snippets: kept, retrieved_at: None, provider: String::new(), stats }
}
