use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use super::{cache_key, CacheEntry, RawSearchResult, SearchCache, SearchError, SearchProvider, SearchQuery};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles each further attempt.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay_ms: 1_000 }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.saturating_sub(2).min(20)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    /// Fail instead of touching the provider on a cache miss.
    pub offline: bool,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    /// Token-bucket refill rate; 0 disables limiting.
    pub requests_per_second: f64,
    pub burst: u32,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self { offline: false, concurrency: 4, retry: RetryPolicy::default(), requests_per_second: 5.0, burst: 4 }
    }
}

/// Token bucket shared by all worker threads.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self { rate: requests_per_second, burst, state: Mutex::new((burst, Instant::now())) }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let (tokens, last) = &mut *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.burst);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub provider: String,
    pub retrieved_at: DateTime<Utc>,
    pub results: Vec<RawSearchResult>,
    pub from_cache: bool,
}

/// Provider plus cache, retry, rate limiting and bounded concurrency.
pub struct Retriever {
    provider: Box<dyn SearchProvider>,
    cache: Option<SearchCache>,
    config: RetrieverConfig,
    limiter: RateLimiter,
    network_calls: AtomicUsize,
}

impl Retriever {
    pub fn new(provider: Box<dyn SearchProvider>, cache: Option<SearchCache>, config: RetrieverConfig) -> Self {
        let limiter = RateLimiter::new(config.requests_per_second, config.burst);
        Self { provider, cache, config, limiter, network_calls: AtomicUsize::new(0) }
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Provider calls made so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn search(&self, query: &SearchQuery) -> Result<SearchResponse, SearchError> {
        let provider = self.provider.name().to_string();
        let key = cache_key(query, &provider);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(SearchResponse {
                    provider,
                    retrieved_at: entry.retrieved_at,
                    results: entry.results,
                    from_cache: true,
                });
            }
        }
        if self.config.offline {
            return Err(SearchError::Offline { query: query.text.clone(), key });
        }
        let mut results = self.fetch_with_retry(query)?;
        results.truncate(query.max_results);
        let retrieved_at = Utc::now().trunc_subsecs(0);
        if let Some(cache) = &self.cache {
            let entry = CacheEntry {
                provider: provider.clone(),
                query: query.text.clone(),
                max_results: query.max_results,
                retrieved_at,
                results: results.clone(),
            };
            cache.put(&key, &entry)?;
        }
        Ok(SearchResponse { provider, retrieved_at, results, from_cache: false })
    }

    fn fetch_with_retry(&self, query: &SearchQuery) -> Result<Vec<RawSearchResult>, SearchError> {
        let attempts = self.config.retry.attempts.max(1);
        let mut attempt = 1;
        loop {
            self.limiter.acquire();
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            let err = match self.provider.fetch(query) {
                Ok(results) => return Ok(results),
                Err(err) => err,
            };
            if attempt >= attempts || !err.is_retryable() {
                return Err(match err {
                    SearchError::Transport { message, .. } => SearchError::Transport { attempts: attempt, message },
                    other => other,
                });
            }
            attempt += 1;
            let mut delay = self.config.retry.delay_before(attempt);
            if let SearchError::Status { retry_after: Some(after), .. } = &err {
                delay = delay.max(*after);
            }
            log::warn!("search attempt {} for `{}` failed ({err}); retrying in {delay:?}", attempt - 1, query.claim_id);
            thread::sleep(delay);
        }
    }

    /// Runs every query with up to `concurrency` requests in flight. The
    /// output is aligned with `queries` regardless of completion order.
    pub fn search_all(&self, queries: &[SearchQuery]) -> Vec<Result<SearchResponse, SearchError>> {
        let workers = self.config.concurrency.clamp(1, queries.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<SearchResponse, SearchError>>>> =
            queries.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(query) = queries.get(i) else { break };
                    let result = self.search(query);
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("result slot poisoned").expect("every query is processed"))
            .collect()
    }
}
